"""Tests for xmlforest."""
