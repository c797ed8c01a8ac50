"""Voice conversion with a jointly trained speaker encoder and speaker consistency loss."""

__version__ = "0.1.0"
