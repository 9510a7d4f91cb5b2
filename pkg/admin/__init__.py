# Operator reports for pattern sets and reference databases
