"""Synthetic scenes, ablation runner, reports and the command line."""
