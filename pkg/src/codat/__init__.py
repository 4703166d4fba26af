"""Class-optimal distributionally adversarial training, desk scale."""

__version__ = "0.1.0"
