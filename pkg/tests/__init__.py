"""Unit tests for aws_profiler package."""
