"""Core simulation logic: model, data, federation and experiment protocols."""
