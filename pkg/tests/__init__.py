"""plaincode test suite."""
