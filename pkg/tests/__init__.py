"""Tests for flowrecon."""
