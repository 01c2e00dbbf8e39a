"""Distributive two-stage two-winner auction policy.

Each relay scores candidate actions with local link metrics built from
per-node value tables: the receive-side metric charges the dual power price
and the shift in source/relay value table entries caused by moving packets,
the transmit-side metric does the same for draining its own buffer.  Relays
first broadcast receive-side bids per stream count, then each relay combines
the best partner's receive bid with its own transmit metric; the smallest
combined bid wins the frame.

Node rows in the value table: row 0 is the source, row 1 + m is relay m.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .phy import (
    NullingInfeasibleError,
    _positive_gains,
    rd_null_basis,
    svd,
    water_fill,
)
from .traffic import ArrivalModel, GlobalCsi, QueueState

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass
class PerNodeValueTable:
    """Learned per-node value tables; value[node][q], node 0 = source."""

    values: np.ndarray  # (n_relays + 1, n_q + 1)

    @classmethod
    def zeros(cls, n_relays: int, n_q: int) -> "PerNodeValueTable":
        return cls(values=np.zeros((n_relays + 1, n_q + 1)))

    @property
    def n_relays(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_q(self) -> int:
        return self.values.shape[1] - 1

    def copy(self) -> "PerNodeValueTable":
        return PerNodeValueTable(values=self.values.copy())


@dataclass
class LagrangeMultipliers:
    """Dual prices: source drop rate, source power, per-relay power."""

    gamma_sd: float
    gamma_sp: float
    gamma_rp: np.ndarray

    @classmethod
    def ones(cls, n_relays: int) -> "LagrangeMultipliers":
        return cls(gamma_sd=1.0, gamma_sp=1.0, gamma_rp=np.ones(n_relays))

    def copy(self) -> "LagrangeMultipliers":
        return LagrangeMultipliers(self.gamma_sd, self.gamma_sp, self.gamma_rp.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.gamma_sd, self.gamma_sp], self.gamma_rp))


@dataclass(frozen=True)
class PolicyParams:
    """Static knobs shared by every metric/bid evaluation."""

    packet_bits: float
    frame_symbols: float
    p_max: float
    power_mode: str = "closed_form"  # closed_form | exact | grid
    power_grid: tuple = None

    def __post_init__(self):
        if self.power_mode not in ("closed_form", "exact", "grid"):
            raise ValueError(f"unknown power_mode {self.power_mode!r}")
        if self.power_mode == "grid" and not self.power_grid:
            raise ValueError("grid power_mode needs a power_grid")

    @property
    def kappa(self) -> float:
        """Packets per unit spectral efficiency: frame symbols / packet bits."""
        return self.frame_symbols / self.packet_bits


@dataclass(frozen=True)
class LocalState:
    """Everything relay `relay` is allowed to see: its queues and own links."""

    relay: int
    q_s: int
    q_m: int
    h_sr: np.ndarray  # source -> this relay
    h_rd: np.ndarray  # this relay -> destination
    h_rr_out: dict  # this relay -> other relays


def local_state(relay: int, q: QueueState, csi: GlobalCsi) -> LocalState:
    return LocalState(
        relay=relay,
        q_s=q.q_s,
        q_m=q.q_relay[relay],
        h_sr=csi.h_sr[relay],
        h_rd=csi.h_rd[relay],
        h_rr_out={m: csi.h_rr[(relay, m)] for m in range(len(csi.h_sr)) if m != relay},
    )


@dataclass(frozen=True)
class BidEntry:
    bid: float
    power: float
    rate_bits: float
    decorrelator: np.ndarray


@dataclass(frozen=True)
class FirstStageBid:
    relay: int
    per_nsr: dict  # n_sr -> BidEntry


@dataclass(frozen=True)
class SecondStageBid:
    relay: int
    total_bid: float
    partner: int | None
    n_sr: int
    n_rd: int
    rd_power: float
    rd_rate_bits: float
    sr_power: float
    sr_rate_bits: float


@dataclass(frozen=True)
class AuctionOutcome:
    m_star: int | None
    n_star: int | None
    n_sr: int
    n_rd: int
    sr_power: float
    rd_power: float
    sr_rate_bits: float
    rd_rate_bits: float
    winning_bid: float

    IDLE_FIELDS = dict(
        m_star=None, n_star=None, n_sr=0, n_rd=0,
        sr_power=0.0, rd_power=0.0, sr_rate_bits=0.0, rd_rate_bits=0.0,
    )

    @classmethod
    def idle(cls, winning_bid: float = 0.0) -> "AuctionOutcome":
        return cls(winning_bid=winning_bid, **cls.IDLE_FIELDS)


def value_derivative(v: PerNodeValueTable, node: int, q: int) -> float:
    """Slope of a value-table row: central difference, one-sided at the edges."""
    row = v.values[node]
    n_q = row.size - 1
    if q <= 0:
        return float(row[1] - row[0])
    if q >= n_q:
        return float(row[n_q] - row[n_q - 1])
    return float((row[q + 1] - row[q - 1]) / 2.0)


def _lookup(row: np.ndarray, x: float, interp: bool) -> float:
    n_q = row.size - 1
    if not interp:
        return float(row[min(max(int(x), 0), n_q)])
    xc = min(max(x, 0.0), float(n_q))
    lo = int(math.floor(xc))
    hi = min(lo + 1, n_q)
    frac = xc - lo
    return float(row[lo] * (1.0 - frac) + row[hi] * frac)


def _sr_packets(rate_bits: float, q_s: int, room: int, params: PolicyParams, interp: bool):
    """Deliverable source->relay packets: capped by source content and the
    receiving relay's remaining buffer room (overflow is never scheduled)."""
    if interp:
        return min(rate_bits / params.packet_bits, float(q_s), float(room))
    return min(int(rate_bits // params.packet_bits), q_s, room)


def _rd_packets(rate_bits: float, q_m: int, params: PolicyParams, interp: bool):
    if interp:
        return min(rate_bits / params.packet_bits, float(q_m))
    return min(int(rate_bits // params.packet_bits), q_m)


def _g_sr_given_rate(
    local, v, lm, power, rate_bits, arrival, params, interp=False
) -> float:
    r = _sr_packets(rate_bits, local.q_s, v.n_q - local.q_m, params, interp)
    vs = v.values[0]
    vm = v.values[1 + local.relay]
    n_q = v.n_q
    acc = lm.gamma_sp * power
    if r:
        vals, probs = arrival.pmf()
        if interp:
            for x, p in zip(vals, probs):
                acc += p * (
                    _lookup(vs, local.q_s - r + x, True)
                    - _lookup(vs, local.q_s + x, True)
                )
            acc += _lookup(vm, local.q_m + r, True) - _lookup(vm, local.q_m, True)
        else:
            lo = np.clip(local.q_s - r + vals, 0, n_q)
            hi = np.clip(local.q_s + vals, 0, n_q)
            acc += float(probs @ (vs[lo] - vs[hi]))
            acc += float(vm[min(local.q_m + r, n_q)] - vm[local.q_m])
    return acc


def _g_rd_given_rate(local, v, lm, power, rate_bits, params, interp=False) -> float:
    r = _rd_packets(rate_bits, local.q_m, params, interp)
    vn = v.values[1 + local.relay]
    acc = lm.gamma_rp[local.relay] * power
    if r:
        acc += _lookup(vn, local.q_m - r, interp) - _lookup(vn, local.q_m, interp)
    return acc


def _sr_rate_bits(gains: np.ndarray, power: float, params: PolicyParams) -> float:
    if gains.size == 0 or power <= 0:
        return 0.0
    return params.frame_symbols * water_fill(gains, power).achieved_rate


def g_sr_metric(
    local: LocalState,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    n_sr: int,
    power: float,
    arrival: ArrivalModel,
    params: PolicyParams,
    interp: bool = False,
) -> float:
    """Receive-side metric: dual power cost plus the value-table shift from
    moving the deliverable packets of an n_sr-stream source link at `power`."""
    if n_sr == 0 or power < 0:
        return lm.gamma_sp * max(power, 0.0)
    gains = _positive_gains(svd(local.h_sr).sigma, n_sr)
    rate = _sr_rate_bits(gains, power, params)
    return _g_sr_given_rate(local, v, lm, power, rate, arrival, params, interp)


def g_rd_metric(
    local: LocalState,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    n_rd: int,
    power: float,
    params: PolicyParams,
    rx_decorrelator: np.ndarray | None = None,
    rx_relay: int | None = None,
    interp: bool = False,
) -> float:
    """Transmit-side metric for an n_rd-stream relay->destination link.

    When a receiving relay is active, the design is confined to the null
    space that protects it (rx_decorrelator against the rx_relay channel).
    """
    if n_rd == 0 or power < 0:
        return lm.gamma_rp[local.relay] * max(power, 0.0)
    gains = _rd_gains(local, n_rd, rx_decorrelator, rx_relay)
    rate = _sr_rate_bits(gains, power, params)
    return _g_rd_given_rate(local, v, lm, power, rate, params, interp)


def _rd_gains(local, n_rd, rx_decorrelator, rx_relay):
    if rx_decorrelator is None or rx_decorrelator.size == 0:
        h_eff = local.h_rd
    else:
        basis = rd_null_basis(rx_decorrelator, local.h_rr_out[rx_relay])
        h_eff = local.h_rd @ basis
    return _positive_gains(svd(h_eff).sigma, n_rd)


def closed_form_power_sr(
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    local: LocalState,
    n_sr: int,
    gains: np.ndarray,
    params: PolicyParams,
) -> float:
    """Water-level power for the source link from the value-table slopes.

    Valid in the large-queue regime where the tables are locally affine;
    clamped to [0, p_max].  Zero means "do not transmit at this stream count".
    """
    if lm.gamma_sp <= 0.0:
        raise ValueError("unconstrained power: gamma_sp must be > 0 (use a power cap)")
    gains = np.asarray(gains, dtype=np.float64)
    if gains.size < n_sr or np.any(gains[:n_sr] <= 0):
        return 0.0
    dv = value_derivative(v, 0, local.q_s) - value_derivative(v, 1 + local.relay, local.q_m)
    p = n_sr * dv * params.kappa / (lm.gamma_sp * LN2) - float(np.sum(1.0 / gains[:n_sr]))
    return min(max(p, 0.0), params.p_max)


def closed_form_power_rd(
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    local: LocalState,
    n_rd: int,
    gains: np.ndarray,
    params: PolicyParams,
) -> float:
    """Transmit-side analogue of closed_form_power_sr."""
    gamma = lm.gamma_rp[local.relay]
    if gamma <= 0.0:
        raise ValueError("unconstrained power: gamma_rp must be > 0 (use a power cap)")
    gains = np.asarray(gains, dtype=np.float64)
    if gains.size < n_rd or np.any(gains[:n_rd] <= 0):
        return 0.0
    dv = value_derivative(v, 1 + local.relay, local.q_m)
    p = n_rd * dv * params.kappa / (gamma * LN2) - float(np.sum(1.0 / gains[:n_rd]))
    return min(max(p, 0.0), params.p_max)


def _golden_min(f, lo: float, hi: float, iters: int = 90) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        if b - a <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (a + b)


def _pick_power(quant_metric, interp_metric, closed_candidate, params: PolicyParams):
    """Choose the transmit power for one stream-count option.

    Candidates come from the configured mode; the quantized metric at the
    chosen power is the bid.  Zero power is always a candidate, so a bid is
    never worse than idling.
    """
    if params.power_mode == "grid":
        cands = sorted(set(params.power_grid) | {0.0})
    elif params.power_mode == "exact":
        cands = [0.0, _golden_min(interp_metric, 0.0, params.p_max)]
    else:
        cands = [0.0, closed_candidate()]
    best_p, best_g = 0.0, 0.0
    for p in cands:
        g = quant_metric(p) if p > 0 else 0.0
        if g < best_g - 1e-15:
            best_p, best_g = p, g
    return best_p, best_g


def first_stage_bids(
    local: LocalState,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    arrival: ArrivalModel,
    params: PolicyParams,
) -> FirstStageBid:
    """Receive-side bids of one relay: per stream count, the best-power metric.

    Entry 0 is the explicit idle option.  Each entry carries the decorrelator
    a transmitting partner needs to steer its null, plus the power/rate that
    realize the bid.
    """
    sv = svd(local.h_sr)
    n_r, n_t = local.h_sr.shape
    n_min = min(n_t, n_r)
    entries = {
        0: BidEntry(
            bid=0.0, power=0.0, rate_bits=0.0,
            decorrelator=np.zeros((0, n_r), dtype=np.complex128),
        )
    }
    for n_sr in range(1, n_min + 1):
        gains = _positive_gains(sv.sigma, n_sr)

        def rate_at(p, gains=gains):
            return _sr_rate_bits(gains, p, params)

        def quant(p, rate_at=rate_at):
            return _g_sr_given_rate(
                local, v, lm, p, rate_at(p), arrival, params, interp=False
            )

        def interp(p, rate_at=rate_at):
            return _g_sr_given_rate(
                local, v, lm, p, rate_at(p), arrival, params, interp=True
            )

        def closed(n_sr=n_sr, gains=gains):
            if lm.gamma_sp <= 0.0:
                return params.p_max
            return closed_form_power_sr(v, lm, local, n_sr, gains, params)

        power, bid = _pick_power(quant, interp, closed, params)
        entries[n_sr] = BidEntry(
            bid=bid,
            power=power,
            rate_bits=rate_at(power),
            decorrelator=sv.u[:, :n_sr].conj().T,
        )
    return FirstStageBid(relay=local.relay, per_nsr=entries)


def _best_rd_option(local, v, lm, n_rd, decorrelator, rx_relay, params):
    """Best transmit power/metric/rate for one stream-count option."""
    if n_rd == 0:
        return 0.0, 0.0, 0.0
    gains = _rd_gains(local, n_rd, decorrelator, rx_relay)

    def rate_at(p, gains=gains):
        return _sr_rate_bits(gains, p, params)

    def quant(p, rate_at=rate_at):
        return _g_rd_given_rate(local, v, lm, p, rate_at(p), params, interp=False)

    def interp(p, rate_at=rate_at):
        return _g_rd_given_rate(local, v, lm, p, rate_at(p), params, interp=True)

    def closed(n_rd=n_rd, gains=gains):
        if lm.gamma_rp[local.relay] <= 0.0:
            return params.p_max
        return closed_form_power_rd(v, lm, local, n_rd, gains, params)

    power, g = _pick_power(quant, interp, closed, params)
    return power, g, rate_at(power)


def second_stage_bids(
    local: LocalState,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    all_first_bids: dict,
    params: PolicyParams,
) -> SecondStageBid:
    """Combined bid of one relay as transmit candidate.

    Minimizes partner-receive bid plus own transmit metric over every
    partner and stream count (the no-receive option included); infeasible
    nulling pairs are skipped.  Ties resolve to the lowest (partner, n_sr).
    """
    n = local.relay
    n_t, n_r = local.h_rd.shape
    n_min = min(n_t, n_r)

    def best_rd(n_rd, decorrelator, rx_relay):
        return _best_rd_option(local, v, lm, n_rd, decorrelator, rx_relay, params)

    # no-receive option first so full idle wins all ties
    n_rd0 = min(n_t, n_r)
    rd_power, rd_g, rd_rate = best_rd(n_rd0, None, None)
    best = SecondStageBid(
        relay=n, total_bid=rd_g, partner=None, n_sr=0, n_rd=n_rd0,
        rd_power=rd_power, rd_rate_bits=rd_rate, sr_power=0.0, sr_rate_bits=0.0,
    )
    for m in sorted(all_first_bids):
        if m == n:
            continue
        fb = all_first_bids[m]
        for n_sr in sorted(fb.per_nsr):
            if n_sr == 0:
                continue
            entry = fb.per_nsr[n_sr]
            n_rd = min(n_t, n_r - n_sr)
            try:
                rd_power, rd_g, rd_rate = best_rd(n_rd, entry.decorrelator, m)
            except NullingInfeasibleError:
                log.debug("relay %d: nulling infeasible vs (m=%d, n_sr=%d)", n, m, n_sr)
                continue
            total = entry.bid + rd_g
            if total < best.total_bid - 1e-15:
                best = SecondStageBid(
                    relay=n, total_bid=total, partner=m, n_sr=n_sr, n_rd=n_rd,
                    rd_power=rd_power, rd_rate_bits=rd_rate,
                    sr_power=entry.power, sr_rate_bits=entry.rate_bits,
                )
    return best


def resolve_auction(second_bids) -> AuctionOutcome:
    """Pick the winning transmit relay (smallest bid, lowest index on ties)."""
    bids = sorted(second_bids, key=lambda b: b.relay)
    if len(bids) < 2:
        raise ValueError(f"auction needs at least 2 relays, got {len(bids)}")
    winner = min(bids, key=lambda b: (b.total_bid, b.relay))
    sr_active = winner.partner is not None and winner.sr_power > 0
    rd_active = winner.rd_power > 0
    return AuctionOutcome(
        m_star=winner.partner if sr_active else None,
        n_star=winner.relay if rd_active else None,
        n_sr=winner.n_sr if sr_active else 0,
        n_rd=winner.n_rd if rd_active else 0,
        sr_power=winner.sr_power if sr_active else 0.0,
        rd_power=winner.rd_power if rd_active else 0.0,
        sr_rate_bits=winner.sr_rate_bits if sr_active else 0.0,
        rd_rate_bits=winner.rd_rate_bits if rd_active else 0.0,
        winning_bid=winner.total_bid,
    )


def representative_bids(
    locals_: list,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    arrival: ArrivalModel,
    params: PolicyParams,
) -> dict:
    """Sampled Bellman right-hand sides at each node's representative state.

    Entry `node` holds RHS(state) - V(state) for the single-nonzero queue
    state with that node at its current backlog, evaluated under this
    frame's channel draw.  At such states the auction collapses:

      source row: only receive-side bids matter (relays are empty), plus
        the arrival-shifted source values;
      relay row m: only that relay's unconstrained transmit metric matters
        (the source is empty, so receive bids are all zero).

    Subtracting the learner's average-cost estimate from these quantities
    gives the differential update that fits the tables to the
    representative-state Bellman equation.
    """
    from dataclasses import replace

    src_best = 0.0
    for local in locals_:
        cf = replace(local, q_m=0)
        bid = first_stage_bids(cf, v, lm, arrival, params)
        src_best = min(src_best, min(e.bid for e in bid.per_nsr.values()))
    q_s = locals_[0].q_s
    vs = v.values[0]
    vals, probs = arrival.pmf()
    n_q = v.n_q
    # arrival drift relative to the all-empty reference; the reference-row
    # equation pins the average-cost offset to the arrival-smeared source
    # value, which cancels from the relay rows entirely
    drift = float(
        probs @ (vs[np.clip(q_s + vals, 0, n_q)] - vs[np.clip(vals, 0, n_q)])
    )
    drop = lm.gamma_sd if q_s == n_q else 0.0
    out = {"src_target": q_s + drop + drift + src_best, "relay_residual": {}}
    for local in locals_:
        n_t, n_r = local.h_rd.shape
        _, g, _ = _best_rd_option(local, v, lm, min(n_t, n_r), None, None, params)
        # the relay-row equation balances when the best drain metric equals
        # minus the backlog, so the residual (not a target) drives the cell
        out["relay_residual"][local.relay] = local.q_m + min(0.0, g)
    return out


def run_auction(
    q: QueueState,
    csi: GlobalCsi,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    arrival: ArrivalModel,
    params: PolicyParams,
) -> AuctionOutcome:
    """One frame of the full protocol: local bids, broadcast, resolution."""
    m_count = len(csi.h_sr)
    locals_ = [local_state(m, q, csi) for m in range(m_count)]
    first = {m: first_stage_bids(locals_[m], v, lm, arrival, params) for m in range(m_count)}
    second = [
        second_stage_bids(locals_[m], v, lm, first, params) for m in range(m_count)
    ]
    return resolve_auction(second)
