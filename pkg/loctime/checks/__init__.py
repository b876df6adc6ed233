# Deterministic identity checks
