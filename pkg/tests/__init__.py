# loctime tests package
