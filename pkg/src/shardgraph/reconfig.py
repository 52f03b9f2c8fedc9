"""Node churn and committee reorganization seeded by consensus timestamps.

Every reconfiguration choice (which committee a joining node enters, which
committees donate members to a depleted one, which members move, who the new
coordinator is) is derived from the consensus timestamp of a control
transaction, so any observer of the consensus order can recompute it.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .sharding import CommitteeTable, ShardState, ShardingError

NodeId = int
CommitteeId = int

# Reorg-trigger interpretations ("exceeds half of ..."):
TRIGGER_COMMITTEE_FRACTION = "committee-fraction"  # half the committee's own baseline
TRIGGER_LITERAL = "literal-s-over-2"               # half the number of committees

DEFAULT_DONOR_COUNT = 2
DEFAULT_MIN_COMMITTEE_SIZE = 4


class ReconfigError(Exception):
    pass


def derive_value(consensus_timestamp: int) -> int:
    """Unsigned integer derived from the canonical serialization of a
    consensus timestamp."""
    blob = consensus_timestamp.to_bytes(8, "big", signed=True)
    return int.from_bytes(hashlib.sha256(blob).digest(), "big")


@dataclass(frozen=True)
class RandomnessDraw:
    """An auditable record of one timestamp-seeded random choice."""

    purpose: str
    source_tx: str
    consensus_timestamp: int
    derived_value: int
    choices: tuple = ()


@dataclass
class ChurnLedger:
    """Per-committee departure counts since the last reorganization."""

    exits: dict[CommitteeId, int] = field(default_factory=dict)
    baseline: dict[CommitteeId, int] = field(default_factory=dict)

    @classmethod
    def from_table(cls, table: CommitteeTable) -> "ChurnLedger":
        return cls(
            exits={cid: 0 for cid in table.coordinators},
            baseline={
                cid: len(table.members(cid)) for cid in table.coordinators
            },
        )

    def note_exit(self, committee: CommitteeId) -> None:
        self.exits[committee] = self.exits.get(committee, 0) + 1

    def reset(self, committee: CommitteeId, new_size: int) -> None:
        self.exits[committee] = 0
        self.baseline[committee] = new_size


def check_reorg_trigger(
    ledger: ChurnLedger,
    committee: CommitteeId,
    mode: str = TRIGGER_COMMITTEE_FRACTION,
    num_committees: Optional[int] = None,
) -> bool:
    exits = ledger.exits.get(committee, 0)
    if mode == TRIGGER_LITERAL:
        if num_committees is None:
            raise ReconfigError("literal trigger mode needs the shard count")
        return exits > num_committees / 2
    return exits > ledger.baseline.get(committee, 0) / 2


# -- pure choice helpers ----------------------------------------------------


def choose_join_committee(consensus_timestamp: int, s: int) -> CommitteeId:
    return derive_value(consensus_timestamp) % s


def choose_donors(
    consensus_timestamp: int,
    depleted: CommitteeId,
    eligible: Iterable[CommitteeId],
    k: int,
) -> list[CommitteeId]:
    """Expand one timestamp into k distinct donor committees."""
    pool = sorted(c for c in eligible if c != depleted)
    if not pool:
        return []
    rng = random.Random(derive_value(consensus_timestamp))
    k = min(k, len(pool))
    return sorted(rng.sample(pool, k))

def choose_split_members(
    consensus_timestamp: int, candidates: Iterable[NodeId], count: int
) -> list[NodeId]:
    pool = sorted(candidates)
    rng = random.Random(derive_value(consensus_timestamp))
    count = min(count, len(pool))
    return sorted(rng.sample(pool, count))


def choose_coordinator(
    consensus_timestamp: int, members: Iterable[NodeId]
) -> NodeId:
    pool = sorted(members)
    if not pool:
        raise ReconfigError("cannot select a coordinator of an empty committee")
    return pool[derive_value(consensus_timestamp) % len(pool)]


def join_request_receiver(table: CommitteeTable) -> NodeId:
    """The global-committee member that handles a join request: the lowest
    node id among the coordinators (deterministic stand-in for 'whoever
    receives the request')."""
    return min(table.coordinators.values())


# -- synchronous operations -------------------------------------------------
#
# The simulator routes these decisions through actual control transactions in
# the graphs; the functions below apply the same logic directly given the
# settled consensus timestamps, and are what unit tests exercise.


def join_node(
    state: ShardState,
    table: CommitteeTable,
    new_node: NodeId,
    consensus_timestamp: int,
) -> CommitteeId:
    if new_node in table.assignment:
        raise ReconfigError(f"node {new_node} already assigned")
    cid = choose_join_committee(consensus_timestamp, table.num_committees)
    table.assignment[new_node] = cid
    state.local_stores[cid].add_member(new_node)
    return cid


def leave_node(
    state: ShardState,
    table: CommitteeTable,
    ledger: ChurnLedger,
    node: NodeId,
) -> bool:
    """Remove a node; returns True when the departing node was its
    committee's coordinator (a reselection must follow)."""
    cid = table.assignment.pop(node, None)
    if cid is None:
        raise ReconfigError(f"unknown node {node}")
    ledger.note_exit(cid)
    state.local_stores[cid].remove_member(node)
    return table.coordinators.get(cid) == node


def reselect_coordinator(
    state: ShardState,
    table: CommitteeTable,
    committee: CommitteeId,
    consensus_timestamp: int,
) -> NodeId:
    members = table.members(committee)
    new = choose_coordinator(consensus_timestamp, members)
    old = table.coordinators.get(committee)
    table.coordinators[committee] = new
    if old != new:
        state.queues[committee].owner = new
        # replicas held by the old coordinator move with the role
        for (holder, cid) in list(state.replicas):
            if holder == old:
                state.replicas[(new, cid)] = state.replicas.pop((holder, cid))
        if old is not None:
            state.global_store.remove_member(old)
        state.global_store.add_member(new)
    return new


@dataclass
class ReorgPlan:
    depleted: CommitteeId
    donors: list[CommitteeId]
    transfers: dict[CommitteeId, list[NodeId]]
    draws: list[RandomnessDraw]
    deferred: bool = False
    reason: str = ""


def plan_reorganization(
    table: CommitteeTable,
    ledger: ChurnLedger,
    depleted: CommitteeId,
    global_ts: int,
    donor_ts: Callable[[CommitteeId], int],
    donor_count: int = DEFAULT_DONOR_COUNT,
    min_size: int = DEFAULT_MIN_COMMITTEE_SIZE,
    source_tx: str = "",
) -> ReorgPlan:
    """Select donors from the global reorg timestamp and split members from
    each donor's intra-shard timestamp."""
    draws: list[RandomnessDraw] = []
    sizes = {cid: len(table.members(cid)) for cid in table.coordinators}
    active = sum(sizes.values())
    # refill the depleted committee back to the (ceiling) average size
    target = max(min_size, -(-active // table.num_committees))
    need = target - sizes[depleted]
    if need <= 0:
        return ReorgPlan(depleted, [], {}, draws)

    eligible = [
        cid
        for cid, size in sizes.items()
        if cid != depleted and size > min_size
    ]
    donors = choose_donors(global_ts, depleted, eligible, donor_count)
    draws.append(
        RandomnessDraw(
            purpose="reorg-donors",
            source_tx=source_tx,
            consensus_timestamp=global_ts,
            derived_value=derive_value(global_ts),
            choices=tuple(donors),
        )
    )
    spare = sum(max(0, sizes[d] - min_size) for d in donors)
    if not donors or spare <= 0:
        return ReorgPlan(
            depleted,
            donors,
            {},
            draws,
            deferred=True,
            reason="no donor committee can spare members",
        )

    transfers: dict[CommitteeId, list[NodeId]] = {}
    remaining = need
    for i, donor in enumerate(donors):
        left = len(donors) - i
        quota = min(
            (remaining + left - 1) // left,
            max(0, sizes[donor] - min_size),
        )
        if quota <= 0:
            continue
        candidates = [
            m
            for m in table.members(donor)
            if m != table.coordinators[donor]
        ]
        ts = donor_ts(donor)
        moved = choose_split_members(ts, candidates, quota)
        transfers[donor] = moved
        remaining -= len(moved)
        draws.append(
            RandomnessDraw(
                purpose=f"reorg-split-{donor}",
                source_tx=source_tx,
                consensus_timestamp=ts,
                derived_value=derive_value(ts),
                choices=tuple(moved),
            )
        )
    return ReorgPlan(depleted, donors, transfers, draws)


def apply_reorganization(
    state: ShardState,
    table: CommitteeTable,
    ledger: ChurnLedger,
    plan: ReorgPlan,
) -> None:
    if plan.deferred:
        return
    for donor, moved in plan.transfers.items():
        for node in moved:
            table.assignment[node] = plan.depleted
            state.local_stores[donor].remove_member(node)
            state.local_stores[plan.depleted].add_member(node)
        # donors keep their exit counts; only their baseline moves
        ledger.baseline[donor] = len(table.members(donor))
    ledger.reset(plan.depleted, len(table.members(plan.depleted)))
    table.epoch += 1


def reorganize_committee(
    state: ShardState,
    table: CommitteeTable,
    ledger: ChurnLedger,
    depleted: CommitteeId,
    global_ts: int,
    donor_ts: Callable[[CommitteeId], int],
    reselect_ts: Callable[[CommitteeId], int],
    donor_count: int = DEFAULT_DONOR_COUNT,
    min_size: int = DEFAULT_MIN_COMMITTEE_SIZE,
) -> ReorgPlan:
    """Full synchronous reorganization: plan, move members, reselect the
    coordinator of every committee whose membership changed."""
    plan = plan_reorganization(
        table,
        ledger,
        depleted,
        global_ts,
        donor_ts,
        donor_count=donor_count,
        min_size=min_size,
    )
    apply_reorganization(state, table, ledger, plan)
    if not plan.deferred:
        for cid in [plan.depleted, *plan.transfers]:
            reselect_coordinator(state, table, cid, reselect_ts(cid))
    return plan
