"""Baseline validators modeling the abort behavior of other deterministic
commit protocols, for comparative metrics only.

All three simulate against the previous block's snapshot and store computed
values rather than commands, so an arithmetic update command counts as a
read of the key it modifies (the fused read happens at the snapshot value).
Without those implied reads the value-based protocols would silently commit
lost updates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import (
    Block,
    ContractError,
    Key,
    ReadRecord,
    Tid,
    apply_command,
    execute_program,
    reads_input,
)
from .engine import BlockResult, resolve_rw_states, validate
from .storage import SnapshotStore

BASELINE_KINDS = ("fabric", "aria", "serial")


@dataclass
class _Sim:
    reads: dict[Tid, tuple[ReadRecord, ...]]
    commands: dict
    updated_keys: dict[Tid, list]
    readers_of: dict[Key, list[Tid]]
    writers_of: dict[Key, list[Tid]]
    eff_read_keys: dict[Tid, set[Key]]  # program reads plus implied command reads
    structure_hits: frozenset[Tid]
    handler_calls: int


class _SnapshotBaseline:
    """Shared simulation for the value-based validators."""

    def __init__(self, store: SnapshotStore):
        self.store = store

    def _simulate(self, block: Block) -> _Sim:
        snapshot = block.id - 1
        store = self.store
        reads = {}
        commands = {}
        updated_keys = {}
        eff_read_keys: dict[Tid, set[Key]] = {}
        readers: dict[Key, set[Tid]] = {}
        writers: dict[Key, list[Tid]] = {}
        for txn in block.txns:
            raw, cmds, updated = execute_program(
                txn.tid, txn.steps, lambda key: store.read(key, snapshot)
            )
            records = [ReadRecord(k, snapshot, v, own) for k, v, own in raw]
            eff = {k for k, _, _ in raw}
            for key in updated:
                writers.setdefault(key, []).append(txn.tid)
                if reads_input(cmds[key]) and key not in eff:
                    eff.add(key)
                    records.append(
                        ReadRecord(key, snapshot, store.read(key, snapshot), False)
                    )
            for key, _, _ in raw:
                readers.setdefault(key, set()).add(txn.tid)
            reads[txn.tid] = tuple(records)
            commands[txn.tid] = cmds
            updated_keys[txn.tid] = updated
            eff_read_keys[txn.tid] = eff
        readers_of = {k: sorted(v) for k, v in readers.items()}
        writers_of = {k: sorted(v) for k, v in writers.items()}
        # Structure hits are reported from program reads only, so the metric
        # stays a property of the workload rather than of the validator.
        tids = [t.tid for t in block.txns]
        dep, calls = resolve_rw_states(tids, readers_of, writers_of)
        hits = frozenset(t for t in tids if validate(dep[t]))
        return _Sim(
            reads=reads,
            commands=commands,
            updated_keys=updated_keys,
            readers_of=readers_of,
            writers_of=writers_of,
            eff_read_keys=eff_read_keys,
            structure_hits=hits,
            handler_calls=calls,
        )

    def _finish(
        self,
        block: Block,
        sim: _Sim,
        aborted: set[Tid],
        writes: dict[Key, int],
        applied_order: dict[Key, tuple[Tid, ...]],
    ) -> BlockResult:
        self.store.install_block_writes(block.id, writes)
        committed = frozenset(t.tid for t in block.txns) - aborted
        return BlockResult(
            block_id=block.id,
            snapshot=block.id - 1,
            committed=committed,
            aborted=frozenset(aborted),
            writes=writes,
            applied_order=applied_order,
            structure_hits=sim.structure_hits,
            reads=sim.reads,
            commands=sim.commands,
            handler_calls=sim.handler_calls,
        )

    def export_state(self) -> Optional[dict]:
        return None

    def restore_state(self, state: Optional[dict]) -> None:
        if state is not None:
            raise ContractError("baseline engines carry no recoverable state")

    def close(self) -> None:
        pass


class FabricEngine(_SnapshotBaseline):
    """Aborts on a single stale read: scanning in TID order, a transaction
    aborts iff a key it read was written by a lower-TID transaction already
    committed in the scan. Commits apply serially in TID order."""

    def process_block(self, block: Block) -> BlockResult:
        if block.id != self.store.last_committed_block + 1:
            raise ContractError(f"block {block.id} out of order")
        sim = self._simulate(block)
        snapshot = block.id - 1
        aborted: set[Tid] = set()
        committed_writes: set[Key] = set()
        writes: dict[Key, int] = {}
        applied: dict[Key, list[Tid]] = {}
        for txn in block.txns:
            tid = txn.tid
            if any(k in committed_writes for k in sim.eff_read_keys[tid]):
                aborted.add(tid)
                continue
            for key in sim.updated_keys[tid]:
                committed_writes.add(key)
                writes[key] = apply_command(
                    sim.commands[tid][key], self.store.read(key, snapshot)
                )
                applied.setdefault(key, []).append(tid)
        order = {k: tuple(v) for k, v in applied.items()}
        return self._finish(block, sim, aborted, writes, order)


class AriaEngine(_SnapshotBaseline):
    """Aborts the higher TID on any write/write overlap, plus transactions
    whose stale read against a surviving lower-TID writer pairs with an
    incoming read dependency. Survivors have disjoint write sets."""

    def process_block(self, block: Block) -> BlockResult:
        if block.id != self.store.last_committed_block + 1:
            raise ContractError(f"block {block.id} out of order")
        sim = self._simulate(block)
        snapshot = block.id - 1
        ww_losers: set[Tid] = set()
        for writers in sim.writers_of.values():
            ww_losers.update(writers[1:])
        aborted = set(ww_losers)
        for txn in block.txns:
            tid = txn.tid
            if tid in aborted:
                continue
            stale = any(
                w < tid and w not in ww_losers
                for key in sim.eff_read_keys[tid]
                for w in sim.writers_of.get(key, ())
            )
            if not stale:
                continue
            incoming = any(
                r != tid
                for key in sim.updated_keys[tid]
                for r in sim.readers_of.get(key, ())
            )
            if incoming:
                aborted.add(tid)
        writes: dict[Key, int] = {}
        applied: dict[Key, tuple[Tid, ...]] = {}
        for txn in block.txns:
            tid = txn.tid
            if tid in aborted:
                continue
            for key in sim.updated_keys[tid]:
                writes[key] = apply_command(
                    sim.commands[tid][key], self.store.read(key, snapshot)
                )
                applied[key] = (tid,)
        return self._finish(block, sim, aborted, writes, applied)


class SerialEngine(_SnapshotBaseline):
    """Executes transactions one by one in TID order against the live state.
    Never aborts; defines the reference final state for any block."""

    def process_block(self, block: Block) -> BlockResult:
        if block.id != self.store.last_committed_block + 1:
            raise ContractError(f"block {block.id} out of order")
        snapshot = block.id - 1
        store = self.store
        overlay: dict[Key, int] = {}
        reads = {}
        commands = {}
        applied: dict[Key, list[Tid]] = {}
        for txn in block.txns:

            def live_read(key: Key):
                if key in overlay:
                    return overlay[key]
                return store.read(key, snapshot)

            raw, cmds, updated = execute_program(txn.tid, txn.steps, live_read)
            reads[txn.tid] = tuple(ReadRecord(k, snapshot, v, own) for k, v, own in raw)
            commands[txn.tid] = cmds
            for key in updated:
                overlay[key] = apply_command(cmds[key], live_read(key))
                applied.setdefault(key, []).append(txn.tid)
        store.install_block_writes(block.id, overlay)
        return BlockResult(
            block_id=block.id,
            snapshot=snapshot,
            committed=frozenset(t.tid for t in block.txns),
            aborted=frozenset(),
            writes=overlay,
            applied_order={k: tuple(v) for k, v in applied.items()},
            structure_hits=frozenset(),
            reads=reads,
            commands=commands,
        )
