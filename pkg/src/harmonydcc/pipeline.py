"""Order-execute pipeline: sequencer, simulated asynchronous broadcast,
replica state machines, and the multi-replica determinism harness.

Consensus is replaced by a single deterministic sequencer; the network is a
seeded discrete-event simulation rather than sockets, because reproducible
asynchrony is the point. The event clock also models per-block execution
occupancy (simulation and commit stages with a seeded straggler factor), so
pipeline overlap shows up as a shorter simulated makespan while the results
themselves stay a pure function of the ordered block stream.
"""
from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .baselines import AriaEngine, FabricEngine, SerialEngine
from .core import (
    GENESIS_PREV_HASH,
    Block,
    ContractError,
    ReadStep,
    Tid,
    Transaction,
    UpdateStep,
    seal_block,
)
from .engine import BlockResult, EngineOptions, HarmonyEngine
from .storage import CHAIN_FILE, ChainError, ChainLog, CheckpointManager, SnapshotStore
from .workloads import Program

ENGINE_KINDS = ("harmony", "fabric", "aria", "serial")

# Execution-occupancy model (event-clock seconds).
SIM_STEP_COST = 2e-4
COMMIT_BASE_COST = 5e-4
COMMIT_WRITE_COST = 1e-4
STRAGGLER_PROB = 0.08
STRAGGLER_FACTOR = 8.0


class LivenessError(RuntimeError):
    """A replica stalled past the configured event horizon."""


class Sequencer:
    """Assigns TIDs in arrival order and cuts blocks of block_size
    transactions; the final block may be short."""

    def __init__(self, block_size: int):
        if block_size <= 0:
            raise ContractError("block size must be positive")
        self.block_size = block_size
        self.next_tid: Tid = 0
        self._pending: list[tuple[Tid, Program]] = []
        self._blocks: list[Block] = []
        self._prev_hash = None

    def submit(self, program: Program) -> Tid:
        tid = self.next_tid
        self.next_tid += 1
        self._pending.append((tid, program))
        if len(self._pending) == self.block_size:
            self._seal_pending()
        return tid

    def _seal_pending(self) -> None:
        block_id = len(self._blocks)
        prev = self._blocks[-1].hash if self._blocks else GENESIS_PREV_HASH
        txns = [
            Transaction(tid=tid, block=block_id, steps=tuple(program))
            for tid, program in self._pending
        ]
        self._blocks.append(seal_block(block_id, txns, prev))
        self._pending.clear()

    def close(self) -> list[Block]:
        if self._pending:
            self._seal_pending()
        return self._blocks


def make_blocks(programs: Sequence[Program], block_size: int) -> list[Block]:
    seq = Sequencer(block_size)
    for program in programs:
        seq.submit(program)
    return seq.close()


class SimulatedNetwork:
    """Per-replica uniform(0, delay_max) delivery delays over a FIFO channel:
    delays never reorder blocks for a replica, they only bunch them up."""

    def __init__(self, seed: int, delay_max: float = 0.0):
        self.seed = seed
        self.delay_max = delay_max

    def delivery_times(self, replica_id: int, n_blocks: int) -> list[float]:
        rng = random.Random(f"{self.seed}:net:{replica_id}")
        times: list[float] = []
        latest = 0.0
        for _ in range(n_blocks):
            latest = max(latest, rng.uniform(0.0, self.delay_max))
            times.append(latest)
        return times


@dataclass
class RunConfig:
    replicas: int = 4
    block_size: int = 25
    delay_max: float = 0.0
    seed: int = 0
    engine: str = "harmony"
    inter_block: bool = False
    update_optim: bool = True
    checkpoint_p: int = 10
    workers: int = 1
    event_horizon: Optional[float] = None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def build_engine(kind: str, store: SnapshotStore, config: RunConfig):
    if kind == "harmony":
        return HarmonyEngine(
            store,
            EngineOptions(
                inter_block=config.inter_block,
                update_optim=config.update_optim,
                workers=config.workers,
            ),
        )
    if config.inter_block or not config.update_optim:
        raise ContractError(
            f"inter_block / update_optim switches only apply to the harmony "
            f"engine, not {kind!r}"
        )
    if kind == "fabric":
        return FabricEngine(store)
    if kind == "aria":
        return AriaEngine(store)
    if kind == "serial":
        return SerialEngine(store)
    raise ContractError(f"unknown engine {kind!r}")


class Replica:
    """Processes received blocks strictly in id order, logging each block
    before executing it; halts on a hash-chain violation."""

    def __init__(
        self,
        replica_id: int,
        config: RunConfig,
        data_dir: Optional[Path] = None,
        workers: Optional[int] = None,
    ):
        self.id = replica_id
        self.store = SnapshotStore()
        chain_path = data_dir / CHAIN_FILE if data_dir else None
        self.chain = ChainLog(chain_path)
        self.checkpoints = (
            CheckpointManager(data_dir, config.checkpoint_p) if data_dir else None
        )
        effective = dataclasses.replace(config, workers=workers or config.workers)
        self.engine = build_engine(config.engine, self.store, effective)
        self.halted = False
        self.state_hashes: list[str] = []
        self.results: list[BlockResult] = []

    def receive(self, block: Block) -> Optional[BlockResult]:
        if self.halted:
            return None
        try:
            self.chain.append_block(block)
        except ChainError:
            self.halted = True
            return None
        result = self.engine.process_block(block)
        self.results.append(result)
        self.state_hashes.append(self.store.state_hash())
        if self.checkpoints is not None:
            self.checkpoints.maybe_checkpoint(
                self.store, result.writes, self.engine.export_state()
            )
        return result

    def close(self) -> None:
        self.chain.close()
        self.engine.close()


@dataclass
class RunOutcome:
    hash_matrix: list[list[str]]  # rows: replicas, columns: blocks
    results: list[list[BlockResult]]
    makespans: list[float]
    halted: list[bool]
    stores: list[SnapshotStore]

    def rows_identical(self) -> bool:
        return all(row == self.hash_matrix[0] for row in self.hash_matrix[1:])


def _block_costs(blocks: Sequence[Block], seed: int) -> list[tuple[float, int]]:
    """(simulation duration, step count) per block; the straggler factor
    models the occasional slow transaction that motivates pipelining."""
    rng = random.Random(f"{seed}:costs")
    costs = []
    for block in blocks:
        slowest = 0.0
        for txn in block.txns:
            factor = STRAGGLER_FACTOR if rng.random() < STRAGGLER_PROB else 1.0
            slowest = max(slowest, len(txn.steps) * factor * SIM_STEP_COST)
        costs.append((slowest, sum(len(t.steps) for t in block.txns)))
    return costs


def tamper_block(block: Block) -> Block:
    """A byte-level corruption model: mutate one step of the first
    transaction while keeping the recorded hashes."""
    first = block.txns[0]
    step = first.steps[0]
    if isinstance(step, UpdateStep):
        mutated = step._replace(operand=step.operand + 1)
    elif isinstance(step, ReadStep):
        mutated = ReadStep(step.key + "x")
    else:
        mutated = step._replace(operand=step.operand + 1)
    txns = (
        Transaction(first.tid, first.block, (mutated,) + first.steps[1:]),
    ) + block.txns[1:]
    return Block(id=block.id, txns=txns, prev_hash=block.prev_hash, hash=block.hash)


def run_replicas(
    blocks: Sequence[Block],
    config: RunConfig,
    data_dirs: Optional[Sequence[Path]] = None,
    tamper: Optional[tuple[int, int]] = None,  # (replica_id, block_id)
    workers_by_replica: Optional[Sequence[int]] = None,
) -> RunOutcome:
    """Deliver every block to every replica after its sampled delay and run
    each replica's engine; returns the per-replica per-block state hashes.

    Replicas share nothing. Delivery is FIFO, so each replica processes
    blocks in id order no matter how the delays fall.
    """
    net = SimulatedNetwork(config.seed, config.delay_max)
    costs = _block_costs(blocks, config.seed)
    replicas = []
    for rid in range(config.replicas):
        data_dir = data_dirs[rid] if data_dirs else None
        workers = workers_by_replica[rid] if workers_by_replica else None
        replicas.append(Replica(rid, config, data_dir=data_dir, workers=workers))
    deliveries = {
        rid: net.delivery_times(rid, len(blocks)) for rid in range(config.replicas)
    }
    if config.event_horizon is not None:
        for rid, times in deliveries.items():
            if times and times[-1] > config.event_horizon:
                raise LivenessError(
                    f"replica {rid} would not finish before the event horizon"
                )
    events = sorted(
        (deliveries[rid][i], rid, i)
        for rid in range(config.replicas)
        for i in range(len(blocks))
    )
    lag = 2 if (config.engine == "harmony" and config.inter_block) else 1
    sim_end = {rid: {} for rid in range(config.replicas)}
    commit_end = {rid: {} for rid in range(config.replicas)}
    for at, rid, i in events:
        replica = replicas[rid]
        block = blocks[i]
        if tamper is not None and tamper == (rid, block.id):
            block = tamper_block(block)
        result = replica.receive(block)
        if result is None:
            continue
        sim_cost, _steps = costs[i]
        ready = commit_end[rid].get(i - lag, 0.0)
        start = max(at, ready)
        sim_end[rid][i] = start + sim_cost
        commit_ready = max(sim_end[rid][i], commit_end[rid].get(i - 1, 0.0))
        commit_cost = COMMIT_BASE_COST + COMMIT_WRITE_COST * len(result.writes)
        commit_end[rid][i] = commit_ready + commit_cost
    makespans = [
        max(commit_end[rid].values()) if commit_end[rid] else 0.0
        for rid in range(config.replicas)
    ]
    outcome = RunOutcome(
        hash_matrix=[r.state_hashes for r in replicas],
        results=[r.results for r in replicas],
        makespans=makespans,
        halted=[r.halted for r in replicas],
        stores=[r.store for r in replicas],
    )
    for replica in replicas:
        replica.close()
    return outcome
