"""Edge learning for frame-error prediction: local, federated and distilled training."""

__version__ = "0.1.0"
