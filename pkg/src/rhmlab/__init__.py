"""Random Hierarchy Model laboratory."""
