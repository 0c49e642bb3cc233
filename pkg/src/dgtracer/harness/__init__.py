"""Experiment harness: cases, scheme orchestration, diagnostics, CLI."""
