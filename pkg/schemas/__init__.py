"""JSON schemas for run manifests and their validation."""
