"""Transaction payload units carried inside hashgraph events."""

from __future__ import annotations

from dataclasses import dataclass, field

# Lifecycle kinds.  Ordinary value transfers are "payload"; the remaining
# kinds are control transactions whose consensus timestamps seed
# reconfiguration randomness.
KIND_PAYLOAD = "payload"
KIND_JOIN = "join"
KIND_REORG = "reorg"
KIND_INTRA_REORG = "intra_reorg"
KIND_RESELECT = "reselect"


@dataclass(frozen=True)
class Transaction:
    """A payload unit tagged with origin/target committee.

    A transaction is cross-shard exactly when origin != target.  Control
    transactions (join/reorg/...) carry their arguments in ``data``.
    """

    tx_id: str
    origin: int
    target: int
    size_units: int = 1
    kind: str = KIND_PAYLOAD
    data: tuple = field(default=())

    @property
    def is_cross(self) -> bool:
        return self.origin != self.target


def classify_transaction(tx: Transaction) -> str:
    """Return "intra" or "cross" depending on origin/target committees."""
    return "cross" if tx.is_cross else "intra"
