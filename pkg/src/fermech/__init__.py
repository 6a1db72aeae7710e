"""Desk-scale facial expression recognition mechanisms.

Mid-level representation mixing with an auxiliary branch, a cosine-similarity
GCN head, a weighted CE/focal/sparse loss, score merging and similarity-vote
prediction correction, all on plain numpy with hand-derived gradients.
"""

from fermech.errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateVectorError,
    DomainError,
    FermechError,
    OracleError,
    ShapeError,
    TrainingError,
)

CLASS_NAMES = ("AN", "DI", "FE", "HA", "SA", "SU")
NUM_CLASSES = len(CLASS_NAMES)

__all__ = [
    "CLASS_NAMES",
    "NUM_CLASSES",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateVectorError",
    "DomainError",
    "FermechError",
    "OracleError",
    "ShapeError",
    "TrainingError",
]
