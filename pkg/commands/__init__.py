"""Command modules registered on the GraspKit CLI group."""
