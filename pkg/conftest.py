# Keeps the repository root importable for tests and benchmarks.
