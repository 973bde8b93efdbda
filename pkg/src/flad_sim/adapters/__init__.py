"""Adapters package for side-effecting integrations."""
