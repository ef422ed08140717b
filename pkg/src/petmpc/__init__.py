"""Persistently exciting tube MPC: dual regulation/identification for uncertain linear systems."""
from .polytope import Polytope

__version__ = "0.1.0"

__all__ = ["Polytope"]
