"""Utils module"""
from .errors import (
    ConfigError, DimensionError, EPNetError, LoadError, NumericError, ParseError, TensorIndexError, UsageError,
)

__all__ = ['EPNetError', 'UsageError', 'ConfigError', 'DimensionError', 'TensorIndexError', 'ParseError',
           'LoadError', 'NumericError']
