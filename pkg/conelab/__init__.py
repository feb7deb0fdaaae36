"""conelab - neighbor-contrast supervised classification lab with hand-derived gradients."""

__version__ = "0.1.0"
