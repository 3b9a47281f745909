"""Stereo-endoscopic super-resolution followed by surgical-instrument segmentation."""
