"""Model kernel: forward/backward, local updates and checkpoints."""
