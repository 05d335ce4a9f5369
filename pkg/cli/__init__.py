"""Command line module"""
from .epnet_cli import main

__all__ = ['main']
