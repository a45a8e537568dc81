"""Large-system rate analysis and statistical-CSIT optimization for RIS-assisted MIMO."""

__version__ = "0.1.0"
