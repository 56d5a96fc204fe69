"""Completion providers runnable as provider commands for the harness."""
