"""Committee partitioning and the cross-shard transaction pipeline.

Nodes are split into local committees, each running its own hashgraph; the
per-committee coordinators together form the global committee, which runs a
hashgraph of its own, relays cross-shard transactions through coordinator
cache queues, and holds replicas of the local graphs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .hashgraph import (
    Event,
    EventStore,
    Hashgraph,
    HashgraphError,
    OrderedEvent,
    create_event,
)
from .transactions import KIND_PAYLOAD, Transaction

NodeId = int
CommitteeId = int


class ShardingError(Exception):
    pass


@dataclass
class CommitteeTable:
    """Node -> committee assignment plus per-committee coordinators."""

    assignment: dict[NodeId, CommitteeId]
    coordinators: dict[CommitteeId, NodeId]
    epoch: int = 0

    @property
    def num_committees(self) -> int:
        return len(self.coordinators)

    def members(self, committee: CommitteeId) -> list[NodeId]:
        return sorted(
            n for n, c in self.assignment.items() if c == committee
        )

    def global_committee(self) -> list[NodeId]:
        return sorted(self.coordinators.values())

    def committee_of(self, node: NodeId) -> CommitteeId:
        return self.assignment[node]

    def is_coordinator(self, node: NodeId) -> bool:
        return node in self.coordinators.values()

    def validate(self) -> None:
        for cid, coord in self.coordinators.items():
            if self.assignment.get(coord) != cid:
                raise ShardingError(
                    f"coordinator {coord} is not a member of committee {cid}"
                )
        for cid in self.coordinators:
            if not self.members(cid):
                raise ShardingError(f"committee {cid} is empty")


def partition_nodes(
    nodes: Iterable[NodeId], s: int, seed: int
) -> CommitteeTable:
    """Random balanced assignment; committee sizes differ by at most one."""
    nodes = sorted(set(nodes))
    if s < 1:
        raise ShardingError("shard count must be >= 1")
    if len(nodes) < s:
        raise ShardingError(f"{len(nodes)} nodes cannot fill {s} committees")
    rng = random.Random(seed)
    shuffled = nodes[:]
    rng.shuffle(shuffled)
    n = len(nodes)
    base, extra = divmod(n, s)
    assignment: dict[NodeId, CommitteeId] = {}
    coordinators: dict[CommitteeId, NodeId] = {}
    pos = 0
    for cid in range(s):
        size = base + (1 if cid < extra else 0)
        members = shuffled[pos : pos + size]
        pos += size
        for m in members:
            assignment[m] = cid
        coordinators[cid] = rng.choice(sorted(members))
    return CommitteeTable(assignment=assignment, coordinators=coordinators)


@dataclass
class CacheQueue:
    """A coordinator's FIFO buffers for cross-shard transactions."""

    owner: NodeId
    outbound: list[Transaction] = field(default_factory=list)
    inbound: list[Transaction] = field(default_factory=list)
    seen_out: set[str] = field(default_factory=set)
    seen_in: set[str] = field(default_factory=set)


# Transaction lifecycle states used for the conservation audit.
TX_PENDING = "pending"          # injected, not yet inside any event
TX_ORIGIN = "origin"            # embedded (marked) in the origin local graph
TX_OUTBOUND = "outbound"        # in the origin coordinator's outbound queue
TX_GLOBAL = "global"            # inside a global-committee event
TX_INBOUND = "inbound"          # in the target coordinator's inbound queue
TX_DELIVERED = "delivered"      # inside a target-committee local event


class ShardState:
    """Graphs, queues, replicas, and the transaction lifecycle registry."""

    def __init__(self, table: CommitteeTable):
        self.table = table
        s = table.num_committees
        self.local_stores: dict[CommitteeId, EventStore] = {}
        self.local_graphs: dict[CommitteeId, Hashgraph] = {}
        for cid in range(s):
            members = table.members(cid)
            store = EventStore(members)
            self.local_stores[cid] = store
            self.local_graphs[cid] = Hashgraph(members, store=store)
        gc = table.global_committee()
        self.global_store = EventStore(gc)
        self.global_graph = Hashgraph(gc, store=self.global_store)
        self.queues: dict[CommitteeId, CacheQueue] = {
            cid: CacheQueue(owner=coord)
            for cid, coord in table.coordinators.items()
        }
        # (holder, committee) -> snapshot
        self.replicas: dict[tuple[NodeId, CommitteeId], ReplicaSnapshot] = {}
        self._checkpoint_seq = 0
        self.tx_state: dict[str, str] = {}

    def _register(self, tx: Transaction, state: str) -> None:
        if tx.kind == KIND_PAYLOAD and tx.is_cross:
            self.tx_state[tx.tx_id] = state


@dataclass
class ReplicaSnapshot:
    committee: CommitteeId
    checkpoint_seq: int
    population: list[NodeId]
    events: list[Event]
    consensus: list[OrderedEvent]


# -- pipeline steps ---------------------------------------------------------


def coordinator_ingest_local(
    state: ShardState,
    table: CommitteeTable,
    committee: CommitteeId,
    received_event: Event,
) -> CacheQueue:
    """Step 1: pull cross-shard transactions out of a gossiped local event
    into the coordinator's outbound queue (deduplicated by tx id)."""
    graph = state.local_graphs[committee]
    if received_event.digest not in graph.store.index:
        raise ShardingError("event not present in the committee's local graph")
    queue = state.queues[committee]
    for tx in received_event.payload:
        if tx.kind != KIND_PAYLOAD or not tx.is_cross:
            continue
        if tx.tx_id in queue.seen_out:
            continue
        queue.seen_out.add(tx.tx_id)
        queue.outbound.append(tx)
        state._register(tx, TX_OUTBOUND)
    return queue


def flush_outbound(
    state: ShardState, committee: CommitteeId, batch_limit: int
) -> list[Transaction]:
    queue = state.queues[committee]
    batch = queue.outbound[:batch_limit]
    del queue.outbound[:batch_limit]
    for tx in batch:
        state._register(tx, TX_GLOBAL)
    return batch


def flush_inbound(
    state: ShardState, committee: CommitteeId, batch_limit: int
) -> list[Transaction]:
    queue = state.queues[committee]
    batch = queue.inbound[:batch_limit]
    del queue.inbound[:batch_limit]
    for tx in batch:
        state._register(tx, TX_DELIVERED)
    return batch


def coordinator_emit_global(
    state: ShardState,
    table: CommitteeTable,
    committee: CommitteeId,
    now: int,
    batch_limit: int,
    other_parent: Optional[str] = None,
) -> Event:
    """Step 2a: embed queued outbound transactions in a new global event."""
    batch = flush_outbound(state, committee, batch_limit)
    coordinator = table.coordinators[committee]
    return create_event(
        coordinator, state.global_graph, other_parent, batch, now
    )


def coordinator_receive_global(
    state: ShardState,
    table: CommitteeTable,
    receiver_committee: CommitteeId,
    global_event: Event,
) -> CacheQueue:
    """Step 2b: file transactions targeting this committee into the
    receiving coordinator's inbound queue."""
    if global_event.digest not in state.global_graph.store.index:
        raise ShardingError("event not present in the global graph")
    queue = state.queues[receiver_committee]
    for tx in global_event.payload:
        if tx.kind != KIND_PAYLOAD or not tx.is_cross:
            continue
        if tx.target != receiver_committee or tx.tx_id in queue.seen_in:
            continue
        queue.seen_in.add(tx.tx_id)
        queue.inbound.append(tx)
        state._register(tx, TX_INBOUND)
    return queue


def coordinator_emit_local(
    state: ShardState,
    table: CommitteeTable,
    committee: CommitteeId,
    now: int,
    batch_limit: int,
    other_parent: Optional[str] = None,
    extra_payload: Iterable[Transaction] = (),
) -> Event:
    """Step 3: deliver queued inbound transactions into the target
    committee's local graph."""
    batch = list(extra_payload) + flush_inbound(state, committee, batch_limit)
    coordinator = table.coordinators[committee]
    return create_event(
        coordinator, state.local_graphs[committee], other_parent, batch, now
    )


# -- replication and recovery ----------------------------------------------


def replicate_checkpoint(
    state: ShardState,
    table: CommitteeTable,
    committee: CommitteeId,
    source: Optional[Hashgraph] = None,
) -> dict[tuple[NodeId, CommitteeId], ReplicaSnapshot]:
    """Copy the committee's graph (the coordinator's view of it, when given)
    to every other global-committee member."""
    from .hashgraph import consensus_order

    graph = source if source is not None else state.local_graphs[committee]
    snapshot = ReplicaSnapshot(
        committee=committee,
        checkpoint_seq=state._checkpoint_seq,
        population=list(graph.population),
        events=graph.events_in_order(),
        consensus=consensus_order(graph),
    )
    state._checkpoint_seq += 1
    own = table.coordinators[committee]
    for holder in table.global_committee():
        if holder == own:
            continue
        prev = state.replicas.get((holder, committee))
        if prev is not None and len(prev.events) == len(snapshot.events):
            continue  # nothing new since last checkpoint
        state.replicas[(holder, committee)] = snapshot
    return state.replicas


def replica_holder_count(
    state: ShardState, table: CommitteeTable, committee: CommitteeId
) -> int:
    """Holders of a complete copy: committee members plus replica holders."""
    holders = set(table.members(committee))
    holders |= {
        holder for (holder, cid) in state.replicas if cid == committee
    }
    return len(holders)


def recover_failed_shard(
    state: ShardState,
    table: CommitteeTable,
    failed: CommitteeId,
    replacement_members: Iterable[NodeId],
) -> CommitteeTable:
    """Rebuild a failed committee from the freshest global-committee replica,
    preserving the pre-failure consensus prefix."""
    replacements = sorted(set(replacement_members))
    if not replacements:
        raise ShardingError("no replacement members supplied")
    candidates = [
        snap
        for (holder, cid), snap in state.replicas.items()
        if cid == failed
    ]
    if not candidates:
        raise ShardingError(
            f"no replica of committee {failed} exists: unrecoverable loss"
        )
    best = max(candidates, key=lambda s: (len(s.events), s.checkpoint_seq))

    store = EventStore(best.population)
    graph = Hashgraph(best.population, store=store)
    for ev in best.events:
        graph.add_event(ev)
    store.advance_consensus()
    prefix = [
        (o.event_id, o.round_received, o.consensus_timestamp)
        for o in store.consensus
    ]
    want = [
        (o.event_id, o.round_received, o.consensus_timestamp)
        for o in best.consensus
    ]
    if prefix[: len(want)] != want and want[: len(prefix)] != prefix:
        raise ShardingError("replica replay diverged from checkpoint order")
    for node in best.population:
        store.remove_member(node)
    for node in replacements:
        store.add_member(node)
    state.local_stores[failed] = store
    state.local_graphs[failed] = graph

    old_coordinator = table.coordinators[failed]
    for node in table.members(failed):
        del table.assignment[node]
    for node in replacements:
        table.assignment[node] = failed
    table.coordinators[failed] = replacements[0]
    state.queues[failed] = CacheQueue(owner=replacements[0])
    state.global_store.remove_member(old_coordinator)
    state.global_store.add_member(replacements[0])
    table.epoch += 1
    return table
