"""Verification of memoryless LLM policies on PRISM MDPs via induced DTMCs."""

__version__ = "0.1.0"
