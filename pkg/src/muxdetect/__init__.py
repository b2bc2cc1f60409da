"""Digital twin of a spatially multiplexed hybrid digital-optical video authenticity screener."""

__version__ = "0.1.0"
