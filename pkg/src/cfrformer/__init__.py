"""Multi-band CFR reconstruction under Markov sub-band interference."""

__version__ = "0.1.0"
