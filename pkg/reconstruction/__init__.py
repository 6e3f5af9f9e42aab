"""Iso-contours, surfaces, predictions, evaluation and synthetic scenes."""
