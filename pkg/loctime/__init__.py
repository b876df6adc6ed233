# Brownian local-time modulus laboratory
