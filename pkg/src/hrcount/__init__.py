"""Heatmap-regulated object counting."""
