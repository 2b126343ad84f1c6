"""Topology-preserving correction of error-bounded lossy compressed scalar fields."""

from .compressor import compress, decompress
from .constraints import Mode, check_constraints
from .corrector import CorrectionConfig, CorrectionResult, correct
from .distsim import run_distributed_correction
from .grid import ScalarField, load_field, save_field
from .metrics import MetricsReport, cp_recall, ct_recall, eg_recall
from .topology import build_reference, compute_topology

__version__ = "0.1.0"

__all__ = [
    "ScalarField",
    "load_field",
    "save_field",
    "compress",
    "decompress",
    "Mode",
    "check_constraints",
    "CorrectionConfig",
    "CorrectionResult",
    "correct",
    "run_distributed_correction",
    "MetricsReport",
    "cp_recall",
    "eg_recall",
    "ct_recall",
    "build_reference",
    "compute_topology",
]
