"""Optimal gas-market clearing on pipeline networks with transient flow physics."""
__version__ = "0.1.0"
