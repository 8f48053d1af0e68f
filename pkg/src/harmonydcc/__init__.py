"""Deterministic concurrency control engine and order-execute block pipeline."""

from .core import (
    Block,
    BranchStep,
    ReadStep,
    Transaction,
    UpdateCommand,
    UpdateStep,
    apply_command,
    compose,
    seal_block,
)
from .engine import BlockResult, EngineOptions, HarmonyEngine
from .pipeline import RunConfig, Sequencer, make_blocks, run_replicas
from .storage import ChainLog, SnapshotStore
from .workloads import WorkloadSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockResult",
    "BranchStep",
    "ChainLog",
    "EngineOptions",
    "HarmonyEngine",
    "ReadStep",
    "RunConfig",
    "Sequencer",
    "SnapshotStore",
    "Transaction",
    "UpdateCommand",
    "UpdateStep",
    "WorkloadSpec",
    "apply_command",
    "compose",
    "generate",
    "make_blocks",
    "run_replicas",
    "seal_block",
]
