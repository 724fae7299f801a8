"""Point-cloud single-object tracking with mixup and cycle-consistency training."""

__version__ = "0.1.0"
