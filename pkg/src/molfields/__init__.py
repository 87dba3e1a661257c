"""Molecular fields: direction/distance fields, neural fields and a hypernetwork diffusion model."""

from .molio import AtomTypeVocab, Conformer, parse_xyz, write_xyz

__version__ = "0.1.0"
__all__ = ["AtomTypeVocab", "Conformer", "parse_xyz", "write_xyz", "__version__"]
