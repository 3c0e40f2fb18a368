"""Unit tests for PyNotebookLM."""
