"""Bridge distillation for low-resolution recognition, at desk scale."""
