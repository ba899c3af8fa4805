"""Acoustic backdoor and poisoning attack staging with a two-layer defense."""
__version__ = "0.1.0"
