"""Tests for distillkit."""
