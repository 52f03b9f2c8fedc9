"""Measured communication/storage counters and the closed-form cost model.

Analytic quantities, for n nodes, s shards, throughput T and event size E:

* unsharded per-node communication  (n - 1) * (T / n) * E
* sharded per-node communication    (n/s - 1) * (T / n) * E
* cross-shard send cost             T_cross * E
* complete-graph copy count         n/s + s - 1
* per-node storage ratio            1/s
"""

from __future__ import annotations

from dataclasses import dataclass, field


class MetricsError(Exception):
    pass


def analytic_comm_cost(n: int, throughput: float, event_size: float) -> float:
    if n < 1:
        raise MetricsError("n must be >= 1")
    return (n - 1) * (throughput / n) * event_size


def analytic_comm_cost_sharded(
    n: int, s: int, throughput: float, event_size: float
) -> float:
    if s < 1:
        raise MetricsError("s must be >= 1")
    if n % s != 0:
        raise MetricsError("balanced case requires s to divide n")
    return (n // s - 1) * (throughput / n) * event_size


def analytic_cross_cost(cross_throughput: float, event_size: float) -> float:
    return cross_throughput * event_size


def analytic_replica_count(n: int, s: int) -> int:
    if s < 1:
        raise MetricsError("s must be >= 1")
    if n % s != 0:
        raise MetricsError("balanced case requires s to divide n")
    return n // s + s - 1


@dataclass
class MetricsReport:
    """Counters accumulated during one simulation run."""

    duration: int = 0
    per_node_comm: dict[int, float] = field(default_factory=dict)
    per_node_handshake: dict[int, float] = field(default_factory=dict)
    per_node_received: dict[int, float] = field(default_factory=dict)
    per_node_storage: dict[int, float] = field(default_factory=dict)
    ordered_tx_units: dict[int, int] = field(default_factory=dict)  # per committee
    injected_tx_units: int = 0
    injected_cross_units: int = 0
    cross_latency: dict[int, int] = field(default_factory=dict)
    replica_counts: dict[int, int] = field(default_factory=dict)
    total_events: int = 0
    empty_events: int = 0

    @property
    def empty_event_fraction(self) -> float:
        return self.empty_events / self.total_events if self.total_events else 0.0

    def throughput_total(self) -> float:
        return (
            sum(self.ordered_tx_units.values()) / self.duration
            if self.duration
            else 0.0
        )

    def add_comm(self, node: int, units: float) -> None:
        self.per_node_comm[node] = self.per_node_comm.get(node, 0.0) + units

    def add_handshake(self, node: int, units: float) -> None:
        self.per_node_handshake[node] = (
            self.per_node_handshake.get(node, 0.0) + units
        )

    def add_received(self, node: int, units: float) -> None:
        self.per_node_received[node] = (
            self.per_node_received.get(node, 0.0) + units
        )

    def add_storage(self, node: int, units: float) -> None:
        self.per_node_storage[node] = (
            self.per_node_storage.get(node, 0.0) + units
        )


def mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def compare_measured(
    report: MetricsReport,
    config,
    coordinators=(),
    tolerance: float = 0.15,
) -> list[dict]:
    """Per-quantity (analytic, measured, relative deviation) rows.

    Coordinator nodes carry the additional global-committee load, so formula
    rows average over non-coordinator nodes only; coordinators get their own
    informational rows.
    """
    n, s = config.n, config.s
    coordinators = set(coordinators)
    rate = report.injected_tx_units / report.duration if report.duration else 0.0
    cross_rate = (
        report.injected_cross_units / report.duration if report.duration else 0.0
    )
    event_size = 1.0

    def comm_rate(nodes):
        return mean(
            report.per_node_comm.get(v, 0.0) / report.duration for v in nodes
        )

    plain = [v for v in report.per_node_comm if v not in coordinators]
    coords = [v for v in report.per_node_comm if v in coordinators]

    rows = []

    def row(quantity, analytic, measured):
        dev = (measured - analytic) / analytic if analytic else 0.0
        rows.append(
            {
                "quantity": quantity,
                "analytic": analytic,
                "measured": measured,
                "relative_deviation": dev,
                "within_tolerance": abs(dev) <= tolerance if analytic else True,
            }
        )

    row(
        "comm_per_node",
        analytic_comm_cost_sharded(n, s, rate, event_size)
        if n % s == 0
        else analytic_comm_cost(n, rate, event_size),
        comm_rate(plain),
    )
    row("cross_send_cost", analytic_cross_cost(cross_rate, event_size), cross_rate)
    if n % s == 0:
        row(
            "replica_count",
            analytic_replica_count(n, s),
            mean(report.replica_counts.values()) if report.replica_counts else 0,
        )
    if coords:
        rows.append(
            {
                "quantity": "comm_per_coordinator",
                "analytic": float("nan"),
                "measured": comm_rate(coords),
                "relative_deviation": float("nan"),
                "within_tolerance": True,
            }
        )
    return rows
