"""Simulated secret sharing and secure aggregation with cost accounting.

Marginal counts are encoded as elements of the ring Z_{2^64}; additive
shares are uniform on the ring and reconstruction is an exact modular sum.
There is no cryptographic transport: the contract is bit-exact aggregation
plus a byte ledger, which is everything the protocol simulations consume.
Noise is applied once by the server role after reconstruction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

SHARE_BYTES = 8
DEFAULT_PARTIES = 3

SERVER = -1


@dataclass
class CommsLedger:
    """Per-client bytes sent/received by round and protocol."""

    entries: list[dict] = field(default_factory=list)

    def charge(
        self,
        client: int,
        round_index: int,
        bytes_sent: int = 0,
        bytes_received: int = 0,
        protocol: str = "",
    ) -> None:
        if bytes_sent < 0 or bytes_received < 0:
            raise ValueError("byte counts must be non-negative")
        self.entries.append(
            {
                "client": int(client),
                "round": int(round_index),
                "bytes_sent": int(bytes_sent),
                "bytes_received": int(bytes_received),
                "protocol": protocol,
            }
        )

    def client_totals(self) -> dict[int, int]:
        """Total traffic (sent + received) per client, server excluded."""
        totals: dict[int, int] = {}
        for e in self.entries:
            if e["client"] == SERVER:
                continue
            totals[e["client"]] = (
                totals.get(e["client"], 0) + e["bytes_sent"] + e["bytes_received"]
            )
        return totals

    def total_client_bytes(self) -> int:
        return sum(self.client_totals().values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, fieldnames=["client", "round", "bytes_sent", "bytes_received", "protocol"]
        )
        writer.writeheader()
        for e in self.entries:
            writer.writerow(e)
        return buf.getvalue()


@dataclass(frozen=True)
class ShareVector:
    """One additive share of an integer-encoded marginal."""

    values: np.ndarray = field(compare=False)
    query_key: tuple[int, ...]
    party: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint64).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _encode(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts)
    as_int = np.rint(counts).astype(np.int64)
    if not np.allclose(counts, as_int):
        raise ValueError("secret sharing requires integer counts")
    return as_int.view(np.uint64)


def _decode(ring: np.ndarray) -> np.ndarray:
    return ring.astype(np.uint64).view(np.int64).astype(np.float64)


def share(
    counts: np.ndarray,
    query_key: tuple[int, ...],
    rng: np.random.Generator,
    parties: int = DEFAULT_PARTIES,
    ledger: CommsLedger | None = None,
    client: int = 0,
    round_index: int = 0,
    protocol: str = "share",
) -> list[ShareVector]:
    """Split integer counts into ``parties`` uniform additive ring shares."""
    if parties < 2:
        raise ValueError("need at least two parties")
    encoded = _encode(counts)
    shares = [
        rng.integers(0, 2**64, size=encoded.shape, dtype=np.uint64)
        for _ in range(parties - 1)
    ]
    last = encoded.copy()
    for s in shares:
        last = last - s  # uint64 arithmetic wraps mod 2^64
    shares.append(last)
    if ledger is not None:
        ledger.charge(
            client,
            round_index,
            bytes_sent=encoded.size * SHARE_BYTES * parties,
            protocol=protocol,
        )
    return [ShareVector(s, tuple(query_key), i) for i, s in enumerate(shares)]


def reconstruct(shares: list[ShareVector]) -> np.ndarray:
    """Exact counts from a complete share set (modular sum, then decode)."""
    if not shares:
        raise ValueError("no shares given")
    key = shares[0].query_key
    total = np.zeros_like(shares[0].values)
    for s in shares:
        if s.query_key != key:
            raise ValueError(f"mismatched query ids: {s.query_key} vs {key}")
        total = total + s.values
    return _decode(total)


def aggregate(share_groups: list[list[ShareVector]]) -> np.ndarray:
    """Sum the marginals of several clients given their share sets.

    Associative and order-independent; exact for totals below 2^63.
    """
    if not share_groups:
        raise ValueError("nothing to aggregate")
    flat = [s for group in share_groups for s in group]
    return reconstruct(flat)


class ShareAccumulator:
    """Server-side running share sums over a fixed query set (one entry per
    party), as used by protocols that pool contributions across rounds."""

    def __init__(self, query_keys: list[tuple[int, ...]], parties: int = DEFAULT_PARTIES):
        self.parties = parties
        self.sums: dict[tuple[int, ...], np.ndarray | None] = {
            tuple(k): None for k in query_keys
        }
        self.mass = 0.0
        self.n_contributors = 0

    def add_client(
        self,
        answers: dict[tuple[int, ...], np.ndarray],
        client_size: int,
        rng: np.random.Generator,
        ledger: CommsLedger | None = None,
        client: int = 0,
        round_index: int = 0,
        protocol: str = "distaim",
    ) -> None:
        for key in self.sums:
            shares = share(
                answers[key],
                key,
                rng,
                parties=self.parties,
                ledger=ledger,
                client=client,
                round_index=round_index,
                protocol=protocol,
            )
            combined = np.zeros_like(shares[0].values)
            for s in shares:
                combined = combined + s.values
            if self.sums[key] is None:
                self.sums[key] = combined
            else:
                self.sums[key] = self.sums[key] + combined
        self.mass += client_size
        self.n_contributors += 1

    def current(self, key: tuple[int, ...]) -> np.ndarray:
        stored = self.sums[tuple(key)]
        if stored is None:
            raise KeyError(f"no contributions for query {key}")
        return _decode(stored)


def secagg_round(
    contributions: list[np.ndarray],
    sigma: float,
    rng: np.random.Generator,
    ledger: CommsLedger | None = None,
    clients: list[int] | None = None,
    round_index: int = 0,
    protocol: str = "secagg",
) -> np.ndarray:
    """Exact sum of client vectors plus one central N(0, sigma^2) per cell.

    Noise is added once per aggregate, not per client; each client is
    charged the bytes of its own vector.
    """
    if not contributions:
        raise ValueError("no contributions")
    stacked = np.asarray(contributions, dtype=np.float64)
    if stacked.ndim != 2:
        raise ValueError("contribution vectors must share one length")
    total = stacked.sum(axis=0)
    if ledger is not None:
        ids = clients if clients is not None else list(range(len(contributions)))
        for cid, vec in zip(ids, contributions):
            ledger.charge(
                cid,
                round_index,
                bytes_sent=np.asarray(vec).size * SHARE_BYTES,
                protocol=protocol,
            )
    if sigma > 0:
        total = total + rng.normal(0.0, sigma, size=total.shape)
    return total
