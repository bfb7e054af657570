"""Shape compiler toolkit: discrete shape codes for point clouds, text,
and shape programs, with an autoregressive code-to-code transformer."""

__version__ = "0.1.0"
