"""Utility functions for distillkit."""
