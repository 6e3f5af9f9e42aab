"""Boundary extraction from labeled samples on one cross-section."""
