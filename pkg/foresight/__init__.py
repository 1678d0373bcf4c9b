"""Foresight policy optimization: self-play training for two-player language games."""

__version__ = "0.1.0"
