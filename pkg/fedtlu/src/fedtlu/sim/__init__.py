"""Experiment orchestration and reporting."""
