"""transportlab: numerical laboratory for transport maps between
log-subharmonic sources and strongly log-concave targets."""

__version__ = "0.1.0"
