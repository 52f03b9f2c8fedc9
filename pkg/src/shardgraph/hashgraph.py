"""Event DAG, gossip-about-gossip, and virtual-voting consensus.

The same machinery runs inside every local committee and inside the global
committee; only the population differs.  All consensus annotations (round
numbers, witness flags, fame, round-received, consensus timestamps) are
functions of an event's fixed ancestry, so they are computed once per event
on the backing store and are independent of gossip arrival order.

Several ``Hashgraph`` views may share one ``EventStore`` (the simulator uses
one store per committee with a per-node view bitmask); a standalone graph
simply owns its store.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .transactions import Transaction

NodeId = int
EventId = str

# Deterministic coin flips enter fame voting every COIN_PERIOD virtual-voting
# rounds; they only matter under adversarial scheduling but guarantee
# termination.
COIN_PERIOD = 10

# size(event) = EVENT_BASE_SIZE + EVENT_TX_SIZE * total payload units.
EVENT_BASE_SIZE = 0
EVENT_TX_SIZE = 1


class HashgraphError(Exception):
    """Raised on malformed events or unresolved references."""


def supermajority(member_count: int) -> int:
    """Smallest integer strictly greater than 2/3 of the member count."""
    if member_count < 1:
        raise HashgraphError("member_count must be >= 1")
    return (2 * member_count) // 3 + 1


@dataclass(frozen=True)
class Event:
    creator: NodeId
    self_parent: Optional[EventId]
    other_parent: Optional[EventId]
    payload: tuple[Transaction, ...]
    created_at: int

    def __post_init__(self):
        object.__setattr__(self, "_digest", _digest_of(self))

    @property
    def digest(self) -> EventId:
        return self._digest  # type: ignore[attr-defined]

    @property
    def size_units(self) -> int:
        return EVENT_BASE_SIZE + EVENT_TX_SIZE * sum(
            t.size_units for t in self.payload
        )


def _blob(b: bytes) -> bytes:
    return len(b).to_bytes(4, "big") + b


def canonical_bytes(event: Event) -> bytes:
    """Canonical serialization: fixed field order, length-prefixed."""
    parts = [
        _blob(event.creator.to_bytes(8, "big", signed=True)),
        _blob(bytes.fromhex(event.self_parent) if event.self_parent else b""),
        _blob(bytes.fromhex(event.other_parent) if event.other_parent else b""),
        _blob(len(event.payload).to_bytes(4, "big")),
    ]
    for tx in event.payload:
        parts.append(_blob(tx.tx_id.encode()))
    parts.append(_blob(event.created_at.to_bytes(8, "big", signed=True)))
    return b"".join(parts)


def _digest_of(event: Event) -> EventId:
    return hashlib.sha256(canonical_bytes(event)).hexdigest()


class OrderedEvent(NamedTuple):
    event_id: EventId
    round_received: int
    consensus_timestamp: int


class EventStore:
    """Canonical event storage plus consensus annotations.

    Events must be inserted parents-first (gossip delivers them in
    topological order), which makes every annotation computable at insert
    time from the event's ancestry alone.
    """

    def __init__(self, population: Iterable[NodeId]):
        self.population: list[NodeId] = sorted(set(population))
        self._member_bit: dict[NodeId, int] = {
            m: i for i, m in enumerate(self.population)
        }
        self.events: dict[EventId, Event] = {}
        self.index: dict[EventId, int] = {}
        self.by_index: list[Event] = []
        self._anc: list[int] = []            # ancestor bitmask, includes self
        self._seq: list[int] = []            # position along self-parent chain
        self._forked: list[int] = []         # creators with a fork visible
        self._creator_events: dict[NodeId, list[int]] = {}
        self._branch_pairs: list[tuple[int, int, NodeId]] = []
        self.round: list[int] = []
        self.is_witness: list[bool] = []
        self.witnesses_by_round: dict[int, list[int]] = {}
        self.max_round = 0
        # fame machinery
        self._masks: list[dict[int, int]] = []   # witness idx -> creator mask
        self._votes: dict[tuple[int, int], bool] = {}
        self._ss_prev: dict[int, list[int]] = {}
        self.fame: dict[int, bool] = {}
        self.fame_decider: dict[int, int] = {}
        self._first_undecided_round = 1
        # total ordering
        self.consensus: list[OrderedEvent] = []
        self._emitted = 0                    # bitmask of ordered events
        self.finalized_round = 0

    # -- membership ---------------------------------------------------------

    def add_member(self, node: NodeId) -> None:
        if node in self._member_bit:
            return
        self._member_bit[node] = len(self._member_bit)
        self.population.append(node)
        self.population.sort()

    def remove_member(self, node: NodeId) -> None:
        # Bit assignments are kept stable; only the supermajority base shrinks.
        if node in self.population:
            self.population.remove(node)

    def member_bit(self, node: NodeId) -> int:
        return self._member_bit[node]

    # -- insertion ----------------------------------------------------------

    def add_event(self, event: Event) -> int:
        digest = event.digest
        if digest in self.index:
            return self.index[digest]
        sp, op = event.self_parent, event.other_parent
        if sp is not None:
            if sp not in self.index:
                raise HashgraphError(f"dangling self_parent {sp[:12]}")
            if self.events[sp].creator != event.creator:
                raise HashgraphError("self_parent by a different creator")
        if op is not None:
            if op not in self.index:
                raise HashgraphError(f"dangling other_parent {op[:12]}")
            if self.events[op].creator == event.creator:
                raise HashgraphError("other_parent created by creator itself")
        if event.creator not in self._member_bit:
            self.add_member(event.creator)

        idx = len(self.by_index)
        self.events[digest] = event
        self.index[digest] = idx
        self.by_index.append(event)

        spi = self.index[sp] if sp is not None else None
        opi = self.index[op] if op is not None else None
        anc = 1 << idx
        forked = 0
        if spi is not None:
            anc |= self._anc[spi]
            forked |= self._forked[spi]
        if opi is not None:
            anc |= self._anc[opi]
            forked |= self._forked[opi]
        self._anc.append(anc)
        self._seq.append(0 if spi is None else self._seq[spi] + 1)

        # fork bookkeeping: a second same-creator child of one parent (or a
        # second chain root) is a branch point
        siblings = self._creator_events.setdefault(event.creator, [])
        for j in siblings:
            other = self.by_index[j]
            if other.self_parent == sp:
                self._branch_pairs.append((j, idx, event.creator))
        siblings.append(idx)
        for a, b, c in self._branch_pairs:
            if (anc >> a) & 1 and (anc >> b) & 1:
                forked |= 1 << self._member_bit[c]
        self._forked.append(forked)

        self._assign_round(idx, spi, opi)
        return idx

    def _assign_round(self, idx: int, spi: Optional[int], opi: Optional[int]):
        event = self.by_index[idx]
        masks: dict[int, int] = {}
        if spi is not None:
            masks.update(self._masks[spi])
        if opi is not None:
            for w, m in self._masks[opi].items():
                masks[w] = masks.get(w, 0) | m
        cbit = 1 << self._member_bit[event.creator]
        anc = self._anc[idx]
        for w in masks:
            if (anc >> w) & 1:
                masks[w] |= cbit

        if spi is None and opi is None:
            r = 1
        else:
            r = max(
                self.round[p] for p in (spi, opi) if p is not None
            )
            sm = supermajority(len(self.population))
            seen = 0
            for w in self.witnesses_by_round.get(r, ()):  # noqa: B007
                if self._strongly_sees_fast(idx, w, masks):
                    seen += 1
                    if seen >= sm:
                        break
            if seen >= sm:
                r += 1
        self.round.append(r)
        witness = spi is None or self.round[spi] < r
        self.is_witness.append(witness)
        if witness:
            masks[idx] = cbit
            self.witnesses_by_round.setdefault(r, []).append(idx)
        self.max_round = max(self.max_round, r)
        # children only consult witnesses of rounds >= r - 1
        self._masks.append(
            {w: m for w, m in masks.items() if self.round[w] >= r - 1}
        )

    # -- predicates ---------------------------------------------------------

    def is_ancestor(self, a: int, b: int) -> bool:
        """True iff b is reachable from a along parent edges (reflexive)."""
        return bool((self._anc[a] >> b) & 1)

    def sees(self, a: int, b: int) -> bool:
        """Ancestry plus fork exclusion: a does not count events by a creator
        it has caught equivocating."""
        if not self.is_ancestor(a, b):
            return False
        cb = self._member_bit[self.by_index[b].creator]
        return not (self._forked[a] >> cb) & 1

    def _strongly_sees_fast(self, a: int, b: int, masks: dict[int, int]) -> bool:
        m = masks.get(b)
        if m is None:
            return False
        cb = self._member_bit[self.by_index[b].creator]
        if (self._forked[a] >> cb) & 1:
            return False
        return (m & ~self._forked[a]).bit_count() >= supermajority(
            len(self.population)
        )

    def strongly_sees(self, a: int, b: int) -> bool:
        """a descends to b through events by a supermajority of members."""
        if not self.is_ancestor(a, b):
            return False
        cb = self._member_bit[self.by_index[b].creator]
        forked = self._forked[a]
        if (forked >> cb) & 1:
            return False
        anc_a = self._anc[a]
        sm = supermajority(len(self.population))
        count = 0
        for creator, evs in self._creator_events.items():
            bit = self._member_bit.get(creator)
            if bit is None or (forked >> bit) & 1:
                continue
            for j in evs:
                if (anc_a >> j) & 1 and self.is_ancestor(j, b):
                    count += 1
                    break
            if count >= sm:
                return True
        return False

    # -- fame ---------------------------------------------------------------

    def _strongly_seen_prev(self, v: int) -> list[int]:
        cached = self._ss_prev.get(v)
        if cached is None:
            prev = self.witnesses_by_round.get(self.round[v] - 1, ())
            cached = [
                u for u in prev if self._strongly_sees_fast(v, u, self._masks[v])
            ]
            self._ss_prev[v] = cached
        return cached

    def _vote(self, v: int, w: int) -> bool:
        key = (v, w)
        got = self._votes.get(key)
        if got is not None:
            return got
        diff = self.round[v] - self.round[w]
        if diff == 1:
            vote = self.sees(v, w)
        else:
            yes = no = 0
            for u in self._strongly_seen_prev(v):
                if self._vote(u, w):
                    yes += 1
                else:
                    no += 1
            vote = yes >= no
            tally = max(yes, no)
            sm = supermajority(len(self.population))
            if diff % COIN_PERIOD == 0:
                if tally < sm:
                    # deterministic coin: low bit of the voter's digest
                    vote = bool(int(self.by_index[v].digest[-1], 16) & 1)
            elif tally >= sm and w not in self.fame:
                self.fame[w] = vote
                self.fame_decider[w] = v
        self._votes[key] = vote
        return vote

    def elect_fame(self) -> None:
        """Decide witness fame where decidable; decisions are final."""
        for r in range(self._first_undecided_round, self.max_round + 1):
            witnesses = sorted(
                self.witnesses_by_round.get(r, ()),
                key=lambda i: self.by_index[i].digest,
            )
            for w in witnesses:
                if w in self.fame:
                    continue
                for d in range(r + 1, self.max_round + 1):
                    voters = sorted(
                        self.witnesses_by_round.get(d, ()),
                        key=lambda i: self.by_index[i].digest,
                    )
                    for v in voters:
                        self._vote(v, w)
                        if w in self.fame:
                            break
                    if w in self.fame:
                        break
            if r == self._first_undecided_round and all(
                w in self.fame for w in self.witnesses_by_round.get(r, ())
            ):
                self._first_undecided_round = r + 1

    # -- total order --------------------------------------------------------

    def _creator_chain(self, w: int) -> list[int]:
        creator = self.by_index[w].creator
        anc_w = self._anc[w]
        chain = [j for j in self._creator_events[creator] if (anc_w >> j) & 1]
        chain.sort(key=lambda j: self._seq[j])
        return chain

    def _median_timestamp(self, x: int, chains: list[list[int]]) -> int:
        stamps = []
        for chain in chains:
            # earliest event on the famous witness's creator chain that
            # already descends from x; ancestry along the chain is monotone
            lo, hi = 0, len(chain) - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if self.is_ancestor(chain[mid], x):
                    hi = mid
                else:
                    lo = mid + 1
            stamps.append(self.by_index[chain[lo]].created_at)
        stamps.sort()
        return stamps[(len(stamps) - 1) // 2]

    def advance_consensus(self) -> None:
        """Assign round-received and consensus timestamps for every round
        whose witnesses are all fame-decided."""
        self.elect_fame()
        r = self.finalized_round + 1
        while True:
            witnesses = self.witnesses_by_round.get(r)
            if not witnesses:
                break
            if any(w not in self.fame for w in witnesses):
                break
            famous = sorted(
                (w for w in witnesses if self.fame[w]),
                key=lambda i: self.by_index[i].digest,
            )
            if famous:
                inter = self._anc[famous[0]]
                for w in famous[1:]:
                    inter &= self._anc[w]
                fresh = inter & ~self._emitted
                chains = [self._creator_chain(w) for w in famous]
                batch = []
                x = fresh
                while x:
                    low = x & -x
                    i = low.bit_length() - 1
                    x ^= low
                    ts = self._median_timestamp(i, chains)
                    batch.append((ts, self.by_index[i].digest, i))
                batch.sort()
                for ts, dg, i in batch:
                    self.consensus.append(OrderedEvent(dg, r, ts))
                    self._emitted |= 1 << i
            self.finalized_round = r
            r += 1

    def view_finalized_round(self, known: int) -> int:
        """Largest finalized round fully decidable inside a node's view."""
        r = 0
        while r < self.finalized_round:
            nxt = r + 1
            for w in self.witnesses_by_round.get(nxt, ()):
                if not (known >> w) & 1:
                    continue
                decider = self.fame_decider.get(w)
                if w not in self.fame or (
                    decider is not None and not (known >> decider) & 1
                ):
                    return r
            r = nxt
        return r


class Hashgraph:
    """One participant's (possibly partial) view over an event store."""

    def __init__(
        self,
        population: Iterable[NodeId],
        owner: Optional[NodeId] = None,
        store: Optional[EventStore] = None,
    ):
        self.store = store if store is not None else EventStore(population)
        self.owner = owner
        self.known = 0
        self.heads: dict[NodeId, EventId] = {}
        if store is not None and store.by_index:
            # a view over a pre-populated shared store starts empty
            pass

    # -- basic accessors ----------------------------------------------------

    @property
    def population(self) -> list[NodeId]:
        return self.store.population

    def __contains__(self, event_id: EventId) -> bool:
        i = self.store.index.get(event_id)
        return i is not None and bool((self.known >> i) & 1)

    def get(self, event_id: EventId) -> Event:
        if event_id not in self:
            raise HashgraphError(f"unknown event {event_id[:12]}")
        return self.store.events[event_id]

    def event_count(self) -> int:
        return self.known.bit_count()

    def events_in_order(self) -> list[Event]:
        return [
            ev
            for i, ev in enumerate(self.store.by_index)
            if (self.known >> i) & 1
        ]

    def head_of(self, node: NodeId) -> Optional[EventId]:
        return self.heads.get(node)

    def _absorb(self, idx: int) -> None:
        self.known |= 1 << idx
        ev = self.store.by_index[idx]
        cur = self.heads.get(ev.creator)
        if cur is None or self.store._seq[self.store.index[cur]] <= self.store._seq[idx]:
            self.heads[ev.creator] = ev.digest

    def add_event(self, event: Event) -> Event:
        idx = self.store.add_event(event)
        self._absorb(idx)
        return event


def create_event(
    creator: NodeId,
    graph: Hashgraph,
    other_parent: Optional[EventId],
    payload: Sequence[Transaction],
    now: int,
) -> Event:
    """Append a new event for ``creator``, chaining onto its current head."""
    if creator not in graph.store._member_bit:
        raise HashgraphError(f"unknown creator {creator}")
    if other_parent is not None:
        if other_parent not in graph:
            raise HashgraphError("unresolvable other_parent")
        if graph.get(other_parent).creator == creator:
            raise HashgraphError("other_parent created by creator itself")
    event = Event(
        creator=creator,
        self_parent=graph.heads.get(creator),
        other_parent=other_parent,
        payload=tuple(payload),
        created_at=now,
    )
    return graph.add_event(event)


def gossip_sync(
    sender_graph: Hashgraph,
    receiver_graph: Hashgraph,
    receiver: NodeId,
    now: int,
    payload: Sequence[Transaction] = (),
) -> tuple[list[Event], Event]:
    """Push the sender's view into the receiver's and record the sync.

    Returns the events the receiver was missing (in topological order) and
    the receiver's new gossip-record event, whose other_parent is the
    sender's head.
    """
    transferred: list[Event] = []
    if receiver_graph.store is sender_graph.store:
        diff = sender_graph.known & ~receiver_graph.known
        x = diff
        while x:
            low = x & -x
            i = low.bit_length() - 1
            x ^= low
            transferred.append(sender_graph.store.by_index[i])
            receiver_graph._absorb(i)
    else:
        for ev in sender_graph.events_in_order():
            if ev.digest not in receiver_graph:
                transferred.append(ev)
                receiver_graph.add_event(ev)
    sender_head = (
        sender_graph.heads.get(sender_graph.owner)
        if sender_graph.owner is not None
        else None
    )
    if sender_head is not None and sender_graph.store.events[sender_head].creator == receiver:
        sender_head = None
    new_event = create_event(receiver, receiver_graph, sender_head, payload, now)
    return transferred, new_event


def is_ancestor(graph: Hashgraph, a: EventId, b: EventId) -> bool:
    store = graph.store
    for e in (a, b):
        if e not in graph:
            raise HashgraphError(f"unresolved event id {e[:12]}")
    return store.is_ancestor(store.index[a], store.index[b])


def strongly_sees(graph: Hashgraph, a: EventId, b: EventId) -> bool:
    store = graph.store
    for e in (a, b):
        if e not in graph:
            raise HashgraphError(f"unresolved event id {e[:12]}")
    return store.strongly_sees(store.index[a], store.index[b])


def assign_rounds(graph: Hashgraph) -> Hashgraph:
    """Rounds are assigned incrementally at insert; provided for symmetry
    and used by tests to assert idempotence."""
    return graph


def elect_fame(graph: Hashgraph) -> Hashgraph:
    graph.store.elect_fame()
    return graph


def consensus_order(graph: Hashgraph) -> list[OrderedEvent]:
    """The view's total order: the canonical order truncated at the last
    round this view can fully decide."""
    store = graph.store
    store.advance_consensus()
    full = graph.known.bit_count() == len(store.by_index)
    if full:
        return list(store.consensus)
    limit = store.view_finalized_round(graph.known)
    return [oe for oe in store.consensus if oe.round_received <= limit]


def rounds_of(graph: Hashgraph) -> dict[EventId, int]:
    store = graph.store
    return {
        ev.digest: store.round[i]
        for i, ev in enumerate(store.by_index)
        if (graph.known >> i) & 1
    }


def witnesses_of(graph: Hashgraph) -> set[EventId]:
    store = graph.store
    return {
        ev.digest
        for i, ev in enumerate(store.by_index)
        if (graph.known >> i) & 1 and store.is_witness[i]
    }


def fame_of(graph: Hashgraph) -> dict[EventId, bool]:
    store = graph.store
    out = {}
    for w, famous in store.fame.items():
        if (graph.known >> w) & 1:
            out[store.by_index[w].digest] = famous
    return out


def detect_forks(graph: Hashgraph) -> set[tuple[NodeId, EventId, EventId]]:
    """Every same-creator event pair where neither is the other's ancestor."""
    store = graph.store
    forks: set[tuple[NodeId, EventId, EventId]] = set()
    for creator, evs in store._creator_events.items():
        if not any(c == creator for _, _, c in store._branch_pairs):
            continue
        visible = [i for i in evs if (graph.known >> i) & 1]
        for ai in range(len(visible)):
            for bi in range(ai + 1, len(visible)):
                a, b = visible[ai], visible[bi]
                if not store.is_ancestor(a, b) and not store.is_ancestor(b, a):
                    d1, d2 = sorted(
                        (store.by_index[a].digest, store.by_index[b].digest)
                    )
                    forks.add((creator, d1, d2))
    return forks
