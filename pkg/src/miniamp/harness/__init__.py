"""Data generation, configuration, experiment runs, I/O and the CLI."""
