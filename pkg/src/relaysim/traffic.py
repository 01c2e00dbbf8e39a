"""Channel sampling, bursty packet arrivals, and the frame queue-update law.

Queues are counted in packets.  A frame serves the start-of-frame queue
contents first (source->relay, relay->destination simultaneously) and
applies new arrivals last, clamping every buffer to [0, n_q].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GlobalCsi:
    """One frame's channel realizations for all links.

    h_sr[m]: source -> relay m, (n_r, n_t)
    h_rd[m]: relay m -> destination, (n_t, n_r)
    h_rr[(n, m)]: relay n -> relay m (n != m), (n_r, n_r)
    """

    h_sr: tuple
    h_rd: tuple
    h_rr: dict


@dataclass(frozen=True)
class QueueState:
    q_s: int
    q_relay: tuple

    def occupancy(self) -> int:
        return self.q_s + sum(self.q_relay)

    def as_vector(self) -> tuple:
        return (self.q_s,) + self.q_relay


@dataclass
class ArrivalModel:
    """I.i.d. per-frame packet arrivals: poisson, deterministic or bernoulli."""

    kind: str
    mean_per_frame: float
    _pmf: tuple = field(default=None, repr=False, compare=False)

    KINDS = ("poisson", "deterministic", "bernoulli")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown arrival kind {self.kind!r}; use {self.KINDS}")
        if self.mean_per_frame < 0:
            raise ValueError("mean_per_frame must be >= 0")
        if self.kind == "bernoulli" and self.mean_per_frame > 1:
            raise ValueError("bernoulli arrivals need mean_per_frame <= 1")
        if self.kind == "deterministic" and self.mean_per_frame != int(self.mean_per_frame):
            raise ValueError("deterministic arrivals need an integer mean")

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "deterministic":
            return int(self.mean_per_frame)
        if self.kind == "bernoulli":
            return int(rng.random() < self.mean_per_frame)
        return int(rng.poisson(self.mean_per_frame))

    def pmf(self, tail_mass: float = 1e-6):
        """Truncated pmf as (values, probs); tail beyond 1 - tail_mass dropped.

        Probabilities are renormalized so downstream expectations stay exact.
        """
        if self._pmf is None:
            if self.kind == "deterministic":
                vals, probs = [int(self.mean_per_frame)], [1.0]
            elif self.kind == "bernoulli":
                p = self.mean_per_frame
                vals, probs = [0, 1], [1.0 - p, p]
            else:
                lam = self.mean_per_frame
                vals, probs, cum, k = [], [], 0.0, 0
                p = math.exp(-lam)
                while cum < 1.0 - tail_mass or k <= lam:
                    vals.append(k)
                    probs.append(p)
                    cum += p
                    k += 1
                    p *= lam / k
                    if k > 1000:
                        break
            probs = np.asarray(probs, dtype=np.float64)
            probs /= probs.sum()
            object.__setattr__(self, "_pmf", (np.asarray(vals, dtype=np.int64), probs))
        return self._pmf


@dataclass(frozen=True)
class ServiceDecision:
    """Packet service for one frame.

    rx_rs receives sr_packets from the source; tx_rs delivers rd_packets to
    the destination.  rx_rs == tx_rs only occurs for full-duplex or
    time-shared decode-and-forward modes.
    """

    rx_rs: int | None
    tx_rs: int | None
    sr_packets: int
    rd_packets: int


@dataclass(frozen=True)
class StepResult:
    state: QueueState
    dropped: int
    src_buffer_full: bool
    relay_dropped: int
    sr_delivered: int
    rd_delivered: int


def sample_csi(rng: np.random.Generator, m: int, n_t: int, n_r: int) -> GlobalCsi:
    """Draw one frame of i.i.d. unit-variance circularly-symmetric fading."""
    if min(m, n_t, n_r) < 1:
        raise ValueError(f"invalid dims m={m}, n_t={n_t}, n_r={n_r}")

    def draw(rows, cols):
        return (
            rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
        ) / np.sqrt(2.0)

    h_sr = tuple(draw(n_r, n_t) for _ in range(m))
    h_rd = tuple(draw(n_t, n_r) for _ in range(m))
    h_rr = {}
    for tx in range(m):
        for rx in range(m):
            if tx != rx:
                h_rr[(tx, rx)] = draw(n_r, n_r)
    return GlobalCsi(h_sr=h_sr, h_rd=h_rd, h_rr=h_rr)


def sample_arrivals(rng: np.random.Generator, model: ArrivalModel) -> int:
    return model.sample(rng)


def step_queues(q: QueueState, d: ServiceDecision, x: int, n_q: int) -> StepResult:
    """Apply one frame of service then arrivals, clamping to [0, n_q].

    Service draws on start-of-frame contents only; arrivals land afterwards.
    Source overflow is returned as `dropped`; relay overflow (receiving
    relay already near capacity) is counted separately.
    """
    if x < 0 or d.sr_packets < 0 or d.rd_packets < 0:
        raise ValueError("packet counts must be nonnegative")
    sr_actual = min(d.sr_packets, q.q_s) if d.rx_rs is not None else 0
    q_s_mid = max(q.q_s - sr_actual, 0)
    dropped = max(q_s_mid + x - n_q, 0)
    q_s_new = min(q_s_mid + x, n_q)

    relays = list(q.q_relay)
    rd_actual = 0
    if d.tx_rs is not None:
        rd_actual = min(d.rd_packets, relays[d.tx_rs])
        relays[d.tx_rs] -= rd_actual
    relay_dropped = 0
    if d.rx_rs is not None and sr_actual:
        room = n_q - relays[d.rx_rs]
        relay_dropped = max(sr_actual - room, 0)
        relays[d.rx_rs] = min(relays[d.rx_rs] + sr_actual, n_q)

    return StepResult(
        state=QueueState(q_s=q_s_new, q_relay=tuple(relays)),
        dropped=dropped,
        src_buffer_full=(q_s_new == n_q),
        relay_dropped=relay_dropped,
        sr_delivered=sr_actual,
        rd_delivered=rd_actual,
    )
