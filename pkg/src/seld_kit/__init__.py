"""Two-stage speech detection and front/back localization for a phone-shaped 8-mic array."""

__version__ = "0.1.0"
