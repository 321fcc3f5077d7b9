"""Multi-view object re-identification and geo-localization on scene graphs."""

__version__ = "0.1.0"
