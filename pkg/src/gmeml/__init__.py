"""Genuine multipartite entanglement detection for three-qubit states.

SDP labelling via the renormalized genuine multipartite negativity, a
from-scratch kernel SVM, and safe semi-supervised (S4VM) prediction
protocols including outside-in grouped iterative prediction.
"""

from gmeml.config import TOLERANCES, Tolerances

__all__ = ["TOLERANCES", "Tolerances"]
__version__ = "0.1.0"
