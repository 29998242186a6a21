"""Cross-year graph-contrastive entity linking over temporal knowledge graphs."""

__version__ = "0.1.0"
