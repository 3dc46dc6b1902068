"""Link-level OTFS simulation with a learned predictive precoder."""

__version__ = "0.1.0"
