"""Configuration, oracle cross-checks, sweeps and the command line."""
