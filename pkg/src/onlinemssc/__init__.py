"""Online min-sum set cover against a dynamic optimum: exponential caching, LMA and oracles."""

__version__ = "0.1.0"
