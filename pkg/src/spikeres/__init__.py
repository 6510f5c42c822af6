"""Certificates, structured matrices and a BLASSO solver for clustered positive spikes."""

__version__ = "0.1.0"
