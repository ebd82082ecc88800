"""Position-based articulated dynamics."""
