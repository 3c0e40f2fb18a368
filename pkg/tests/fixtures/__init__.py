"""Test fixtures for plaincode."""
