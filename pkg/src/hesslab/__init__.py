"""hesslab: lattice numerics for regularisation of admissible functions."""

__version__ = "0.1.0"
