"""Utility modules: image file I/O and named-tensor archives."""
