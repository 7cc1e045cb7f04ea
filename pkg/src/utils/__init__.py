# Numeric utilities package
