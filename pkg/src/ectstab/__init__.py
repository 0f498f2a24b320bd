"""Euler characteristic transforms of embedded 1-complexes.

Exact ECC/ECT/SECT computation on piecewise-linear embeddings, closed-form
stability and interpolation bounds, and a Gaussian-process smoothing
estimator of the ECT for curves observed under ambient noise.
"""

__version__ = "0.1.0"

from ectstab.complex import (
    CwComplex,
    DirectionSet,
    Edge,
    Embedding,
    make_directions,
)
from ectstab.ect import EctField, SectCurve, StepFunction, ecc, ect_distance, ect_field, sect

__all__ = [
    "CwComplex",
    "DirectionSet",
    "Edge",
    "Embedding",
    "EctField",
    "SectCurve",
    "StepFunction",
    "ecc",
    "ect_distance",
    "ect_field",
    "make_directions",
    "sect",
]
