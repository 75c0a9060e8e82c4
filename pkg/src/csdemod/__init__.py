"""Channel-shortening demodulator design and simulation toolkit."""

__version__ = "0.1.0"
