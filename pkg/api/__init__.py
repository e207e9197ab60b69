"""Command-line surface: run configuration and subcommands."""
