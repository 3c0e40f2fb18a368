"""Integration tests for PyNotebookLM."""
