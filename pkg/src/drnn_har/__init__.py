"""Stacked-LSTM human activity recognition from raw accelerometer samples."""

__version__ = "0.1.0"
