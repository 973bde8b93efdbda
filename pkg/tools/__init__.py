"""Utility scripts package for repository automation and checks."""
