"""Abort-minimizing deterministic concurrency control engine.

Each block is processed in two steps. The simulation step runs every
transaction against the same block snapshot, recording reads and collecting
update commands into a per-key reservation table. The commit step resolves
read/write dependencies, aborts transactions caught in the dangerous
read-dependency pattern, orders the surviving update commands per key by
ascending min_out (ties by TID), coalesces them, and installs the block's
writes.

min_out(j) is the smallest TID of a transaction whose write T_j read the
before-image of, when that TID is below j (else j + 1); max_in(j) is the
largest TID that read the before-image of one of T_j's writes (sentinel -1
when none). T_j aborts iff min_out < j and min_out <= max_in, which holds
exactly when T_j is the middle node of a pattern T_i <-rw- T_j <-rw- T_k
with i < j and i <= k. Everything else, including write/write conflicts, is
handled by reordering, without aborts.

With inter-block parallelism a block simulates against the snapshot two
blocks back, so dependencies against the immediately preceding block exist.
The generalized abort policy stays deterministic under network asynchrony by
only ever aborting transactions of the block currently entering its commit
step: a pattern whose two newest members share that block aborts the middle
one, and a pattern reaching back into the previous block aborts the newest
one.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Block,
    BlockId,
    Command,
    ContractError,
    Key,
    ReadRecord,
    Tid,
    apply_command,
    compose,
    execute_program,
    reads_input,
)
from .storage import SnapshotStore

NO_INCOMING = -1  # max_in sentinel; every TID is non-negative


@dataclass
class EngineOptions:
    inter_block: bool = False
    update_optim: bool = True
    workers: int = 1


@dataclass
class DependencyState:
    tid: Tid
    min_out: Tid
    max_in: Tid

    @classmethod
    def initial(cls, tid: Tid) -> "DependencyState":
        return cls(tid=tid, min_out=tid + 1, max_in=NO_INCOMING)


def validate(state: DependencyState) -> bool:
    """True when the transaction must abort under the validation rule."""
    return state.min_out < state.tid and state.min_out <= state.max_in


def resolve_rw_states(
    tids,
    readers_of: dict[Key, list[Tid]],
    writers_of: dict[Key, list[Tid]],
) -> tuple[dict[Tid, DependencyState], int]:
    """Fold every reader/writer pair into min_out / max_in accumulators.

    Returns the per-transaction states and the number of handler
    invocations, which equals the number of (key, reader, writer) pairs.
    """
    dep = {t: DependencyState.initial(t) for t in tids}
    calls = 0
    for key, writers in writers_of.items():
        readers = readers_of.get(key)
        if not readers:
            continue
        for r in readers:
            state_r = dep[r]
            for w in writers:
                if w == r:
                    continue
                if w < state_r.min_out:
                    state_r.min_out = w
                state_w = dep[w]
                if r > state_w.max_in:
                    state_w.max_in = r
                calls += 1
    return dep, calls


@dataclass
class ReservationEntry:
    commands: list[tuple[Tid, Command]] = field(default_factory=list)
    handled: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class BlockExecution:
    block: Block
    snapshot: BlockId
    reads: dict[Tid, tuple[ReadRecord, ...]] = field(default_factory=dict)
    commands: dict[Tid, dict[Key, Command]] = field(default_factory=dict)
    updated_keys: dict[Tid, list[Key]] = field(default_factory=dict)
    reservation: dict[Key, ReservationEntry] = field(default_factory=dict)
    readers_of: dict[Key, list[Tid]] = field(default_factory=dict)
    writers_of: dict[Key, list[Tid]] = field(default_factory=dict)
    dep_states: dict[Tid, DependencyState] = field(default_factory=dict)
    inter_deps: list[tuple[Tid, Tid, str]] = field(default_factory=list)
    handler_calls: int = 0


@dataclass
class BlockResult:
    block_id: BlockId
    snapshot: BlockId
    committed: frozenset[Tid]
    aborted: frozenset[Tid]
    writes: dict[Key, int]
    applied_order: dict[Key, tuple[Tid, ...]]
    structure_hits: frozenset[Tid]
    reads: dict[Tid, tuple[ReadRecord, ...]]
    commands: dict[Tid, dict[Key, Command]]
    handler_calls: int = 0
    inter_deps: tuple[tuple[Tid, Tid, str], ...] = ()


@dataclass
class _Carryover:
    """What the next block's commit step may consult about this block."""

    writers_of: dict[Key, list[Tid]]  # committed writers only
    readers_of: dict[Key, list[Tid]]  # committed readers only
    reaches_smaller: frozenset[Tid]  # committed txns with an rw edge to a lower TID


class HarmonyEngine:
    """Snapshot-simulate, validate, reorder, coalesce, install."""

    def __init__(self, store: SnapshotStore, options: Optional[EngineOptions] = None):
        self.store = store
        self.options = options or EngineOptions()
        self._prev: Optional[_Carryover] = None
        self._pool: Optional[ThreadPoolExecutor] = None

    # -- simulation step ----------------------------------------------------

    def simulate(self, txn, exec_: BlockExecution) -> None:
        store = self.store
        snapshot = exec_.snapshot
        raw_reads, commands, updated = execute_program(
            txn.tid, txn.steps, lambda key: store.read(key, snapshot)
        )
        exec_.reads[txn.tid] = tuple(
            ReadRecord(key, snapshot, observed, own) for key, observed, own in raw_reads
        )
        exec_.commands[txn.tid] = commands
        exec_.updated_keys[txn.tid] = updated
        for key in updated:
            entry = exec_.reservation.setdefault(key, ReservationEntry())
            entry.commands.append((txn.tid, commands[key]))

    def _simulate_block(self, block: Block, snapshot: BlockId) -> BlockExecution:
        exec_ = BlockExecution(block=block, snapshot=snapshot)
        workers = self.options.workers
        if workers > 1 and len(block.txns) > 1:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=workers)
            list(self._pool.map(lambda t: self.simulate(t, exec_), block.txns))
        else:
            for txn in block.txns:
                self.simulate(txn, exec_)
        return exec_

    # -- dependency resolution ----------------------------------------------

    def resolve_dependencies(self, exec_: BlockExecution) -> None:
        readers_of: dict[Key, set[Tid]] = {}
        for tid, records in exec_.reads.items():
            for record in records:
                readers_of.setdefault(record.key, set()).add(tid)
        exec_.readers_of = {k: sorted(v) for k, v in readers_of.items()}
        exec_.writers_of = {
            key: sorted(t for t, _ in entry.commands)
            for key, entry in exec_.reservation.items()
        }
        tids = [t.tid for t in exec_.block.txns]
        exec_.dep_states, exec_.handler_calls = resolve_rw_states(
            tids, exec_.readers_of, exec_.writers_of
        )
        if self.options.inter_block:
            self._record_inter_deps(exec_)

    def _record_inter_deps(self, exec_: BlockExecution) -> None:
        prev = self._prev
        if prev is None:
            return
        deps = exec_.inter_deps
        for key, readers in exec_.readers_of.items():
            for w in prev.writers_of.get(key, ()):
                for r in readers:
                    deps.append((r, w, "rw"))  # newer reader precedes older writer
        for key, writers in exec_.writers_of.items():
            for r in prev.readers_of.get(key, ()):
                for w in writers:
                    deps.append((r, w, "rw"))
            for w_prev in prev.writers_of.get(key, ()):
                for w in writers:
                    deps.append((w_prev, w, "ww"))
                    if reads_input(exec_.commands[w][key]):
                        deps.append((w_prev, w, "wr"))

    # -- validation ---------------------------------------------------------

    def enhanced_validate(self, exec_: BlockExecution) -> set[Tid]:
        """Generalized abort policy over intra-block rw edges plus
        dependencies against the previous in-flight block.

        With no inter-block dependencies this reduces exactly to the plain
        validation rule.
        """
        prev = self._prev
        aborts: set[Tid] = set()
        for txn in exec_.block.txns:
            tid = txn.tid
            state = exec_.dep_states[tid]
            earliest_out = state.min_out
            behind_committed_writer = False
            if prev is not None:
                for record in exec_.reads[tid]:
                    for w in prev.writers_of.get(record.key, ()):
                        if w < earliest_out:
                            earliest_out = w
                        if w in prev.reaches_smaller:
                            behind_committed_writer = True
            if earliest_out < tid and earliest_out <= state.max_in:
                aborts.add(tid)  # both newer members share this block
            elif behind_committed_writer:
                aborts.add(tid)  # pattern reaches into the previous block
        return aborts

    def _ww_losers(self, exec_: BlockExecution) -> set[Tid]:
        """Write/write fallback used when update reordering is disabled:
        every writer of a key except the lowest TID aborts."""
        losers: set[Tid] = set()
        for writers in exec_.writers_of.values():
            losers.update(writers[1:])
        return losers

    # -- commit step --------------------------------------------------------

    def apply_write_sets(
        self,
        tid: Tid,
        exec_: BlockExecution,
        committed: frozenset[Tid],
        writes: dict[Key, int],
        applied_order: dict[Key, tuple[Tid, ...]],
    ) -> None:
        """Walk the transaction's updated keys; the first transaction to
        reach a key applies the whole coalesced update for it, others skip."""
        store = self.store
        dep = exec_.dep_states
        base_block = exec_.block.id - 1
        for key in exec_.updated_keys[tid]:
            entry = exec_.reservation[key]
            with entry.lock:
                if entry.handled:
                    continue
                entry.handled = True
            survivors = [(t, cmd) for t, cmd in entry.commands if t in committed]
            if not survivors:
                continue
            survivors.sort(key=lambda item: (dep[item[0]].min_out, item[0]))
            composed = compose([cmd for _, cmd in survivors])
            writes[key] = apply_command(composed, store.read(key, base_block))
            applied_order[key] = tuple(t for t, _ in survivors)

    def _apply_block(
        self, exec_: BlockExecution, committed: frozenset[Tid]
    ) -> tuple[dict[Key, int], dict[Key, tuple[Tid, ...]]]:
        writes: dict[Key, int] = {}
        applied_order: dict[Key, tuple[Tid, ...]] = {}
        todo = [t.tid for t in exec_.block.txns if t.tid in committed]
        workers = self.options.workers
        if workers > 1 and len(todo) > 1:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=workers)
            list(
                self._pool.map(
                    lambda t: self.apply_write_sets(
                        t, exec_, committed, writes, applied_order
                    ),
                    todo,
                )
            )
        else:
            for tid in todo:
                self.apply_write_sets(tid, exec_, committed, writes, applied_order)
        return writes, applied_order

    # -- orchestration ------------------------------------------------------

    def process_block(self, block: Block) -> BlockResult:
        if block.id != self.store.last_committed_block + 1:
            raise ContractError(
                f"block {block.id} entered its commit step out of order "
                f"(store is at {self.store.last_committed_block})"
            )
        snapshot = block.id - (2 if self.options.inter_block else 1)
        exec_ = self._simulate_block(block, snapshot)
        self.resolve_dependencies(exec_)
        if self.options.inter_block:
            hits = self.enhanced_validate(exec_)
        else:
            hits = {
                tid for tid, state in exec_.dep_states.items() if validate(state)
            }
        aborted = set(hits)
        if not self.options.update_optim:
            aborted |= self._ww_losers(exec_)
        committed = frozenset(t.tid for t in block.txns) - aborted
        writes, applied_order = self._apply_block(exec_, committed)
        self.store.install_block_writes(block.id, writes)
        if self.options.inter_block:
            self._prev = self._carryover(exec_, committed)
        return BlockResult(
            block_id=block.id,
            snapshot=snapshot,
            committed=committed,
            aborted=frozenset(aborted),
            writes=writes,
            applied_order=applied_order,
            structure_hits=frozenset(hits),
            reads=exec_.reads,
            commands=exec_.commands,
            handler_calls=exec_.handler_calls,
            inter_deps=tuple(exec_.inter_deps),
        )

    def _carryover(
        self, exec_: BlockExecution, committed: frozenset[Tid]
    ) -> _Carryover:
        prev = self._prev
        reaches: set[Tid] = set()
        for tid in committed:
            if exec_.dep_states[tid].min_out < tid:
                reaches.add(tid)
            elif prev is not None and any(
                record.key in prev.writers_of for record in exec_.reads[tid]
            ):
                reaches.add(tid)
        return _Carryover(
            writers_of={
                key: [t for t in writers if t in committed]
                for key, writers in exec_.writers_of.items()
                if any(t in committed for t in writers)
            },
            readers_of={
                key: [t for t in readers if t in committed]
                for key, readers in exec_.readers_of.items()
                if any(t in committed for t in readers)
            },
            reaches_smaller=frozenset(reaches),
        )

    # -- recovery support ---------------------------------------------------

    def export_state(self) -> Optional[dict]:
        if self._prev is None:
            return None
        return {
            "writers_of": {k: list(v) for k, v in self._prev.writers_of.items()},
            "readers_of": {k: list(v) for k, v in self._prev.readers_of.items()},
            "reaches_smaller": sorted(self._prev.reaches_smaller),
        }

    def restore_state(self, state: Optional[dict]) -> None:
        if state is None:
            self._prev = None
            return
        self._prev = _Carryover(
            writers_of={k: list(v) for k, v in state["writers_of"].items()},
            readers_of={k: list(v) for k, v in state["readers_of"].items()},
            reaches_smaller=frozenset(state["reaches_smaller"]),
        )

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
