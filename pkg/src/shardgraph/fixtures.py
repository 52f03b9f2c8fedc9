"""Load and dump small event graphs from a structured text format.

Fixture files drive the brute-force oracle tests.  Format, one event per
line, referencing parents by earlier line index (``-`` for absent)::

    population 0 1 2 3
    # creator  self_parent  other_parent  payload_count  created_at
    0 - - 0 0
    1 - - 0 0
    0 0 1 1 1

Payload transactions are synthesized intra-shard units with deterministic
ids derived from the line index.
"""

from __future__ import annotations

from typing import Iterable

from .hashgraph import Event, Hashgraph, HashgraphError
from .transactions import Transaction


def load_fixture(text: str) -> tuple[Hashgraph, list[Event]]:
    population: list[int] = []
    rows: list[tuple[int, int | None, int | None, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "population":
            population = [int(f) for f in fields[1:]]
            continue
        if len(fields) != 5:
            raise HashgraphError(f"fixture line {lineno}: expected 5 fields")
        creator = int(fields[0])
        sp = None if fields[1] == "-" else int(fields[1])
        op = None if fields[2] == "-" else int(fields[2])
        rows.append((creator, sp, op, int(fields[3]), int(fields[4])))
    if not population:
        raise HashgraphError("fixture missing population line")

    graph = Hashgraph(population)
    events: list[Event] = []
    for i, (creator, sp, op, count, at) in enumerate(rows):
        payload = tuple(
            Transaction(tx_id=f"fx{i}_{j}", origin=0, target=0)
            for j in range(count)
        )
        ev = Event(
            creator=creator,
            self_parent=events[sp].digest if sp is not None else None,
            other_parent=events[op].digest if op is not None else None,
            payload=payload,
            created_at=at,
        )
        graph.add_event(ev)
        events.append(ev)
    return graph, events


def dump_fixture(population: Iterable[int], events: list[Event]) -> str:
    index = {ev.digest: i for i, ev in enumerate(events)}
    lines = ["population " + " ".join(str(p) for p in sorted(population))]
    for ev in events:
        sp = "-" if ev.self_parent is None else str(index[ev.self_parent])
        op = "-" if ev.other_parent is None else str(index[ev.other_parent])
        lines.append(
            f"{ev.creator} {sp} {op} {len(ev.payload)} {ev.created_at}"
        )
    return "\n".join(lines) + "\n"


def round_robin_fixture(n: int = 4, events_per_node: int = 3) -> str:
    """A deterministic n-node gossip schedule used by the oracle tests."""
    from .hashgraph import EventStore, create_event, gossip_sync

    store = EventStore(range(n))
    graphs = [
        Hashgraph(list(range(n)), owner=i, store=store) for i in range(n)
    ]
    events: list[Event] = []
    for i in range(n):
        events.append(create_event(i, graphs[i], None, (), 0))
    tick = 1
    created = [1] * n
    while min(created) < events_per_node:
        for sender in range(n):
            receiver = (sender + 1 + tick % (n - 1)) % n
            if receiver == sender:
                receiver = (receiver + 1) % n
            if created[receiver] >= events_per_node:
                continue
            payload = (
                Transaction(tx_id=f"t{tick}_{receiver}", origin=0, target=0),
            )
            _, ev = gossip_sync(
                graphs[sender], graphs[receiver], receiver, tick, payload
            )
            events.append(ev)
            created[receiver] += 1
            tick += 1
            if min(created) >= events_per_node:
                break
    return dump_fixture(range(n), events)
