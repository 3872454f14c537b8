"""Desk-scale autonomous racing benchmark: simulator, controllers, race monitor."""

__version__ = "0.1.0"
