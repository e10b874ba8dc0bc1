"""padaforge: principal adversarial domain identification and adaptation."""

__version__ = "0.1.0"
