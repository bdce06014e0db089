"""MStar: multi-starting progressive message passing for inductive KG reasoning."""

__version__ = "0.1.0"
