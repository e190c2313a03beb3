"""Federated NCF simulator with model-poisoning attacks."""
__version__ = "0.1.0"
