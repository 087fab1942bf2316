"""Digital-twin toolkit for a spatial two-group SEIRS epidemic model."""
__version__ = "0.1.0"
