"""Temporal state-space sharing decoder for video semantic segmentation."""
