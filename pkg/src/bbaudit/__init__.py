"""Black-box auditing as hypothesis testing."""

__version__ = "0.1.0"
