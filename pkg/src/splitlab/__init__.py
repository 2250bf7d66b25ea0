"""splitlab: label-privacy experiments for split learning."""

__version__ = "0.1.0"
