"""magplan: particle-filter localization and information-aware planning on magnetic anomaly maps."""

__version__ = "0.1.0"
