"""ROI-guided deep joint source-channel coding for image transmission."""

__version__ = "0.1.0"
