"""Configuration, checkpoints, experiment orchestration, plot export and the CLI."""
