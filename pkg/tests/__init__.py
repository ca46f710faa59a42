"""Tests for pgn-gan-lab."""
