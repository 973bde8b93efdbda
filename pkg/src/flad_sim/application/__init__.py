"""Application services that run experiment commands end to end."""
