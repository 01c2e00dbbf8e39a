"""Reference scheduling policies: dynamic backpressure and CSIT-only.

All baselines transmit at fixed full power on whichever links they
activate; none of them adapt duals or learn.  Half-duplex buffered
forwarding enforces the interference-nulling constraint between the
receiving and transmitting relays; full-duplex waives it (and allows the
same relay to do both).  Traditional decode-and-forward routes through a
single relay, halving both hop rates under half-duplex time sharing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .auction import AuctionOutcome, PolicyParams
from .phy import NullingInfeasibleError, _positive_gains, rd_null_basis, svd, water_fill
from .traffic import GlobalCsi, QueueState


@dataclass(frozen=True)
class BaselineConfig:
    policy: str  # backpressure | csit_only
    duplex: str  # half | full
    protocol: str  # bdf | df
    power_mode: str = "fixed_full_power"

    def __post_init__(self):
        if self.policy not in ("backpressure", "csit_only"):
            raise ValueError(f"unknown baseline policy {self.policy!r}")
        if self.duplex not in ("half", "full"):
            raise ValueError(f"unknown duplex mode {self.duplex!r}")
        if self.protocol not in ("bdf", "df"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.policy == "backpressure" and self.protocol == "df":
            raise ValueError("backpressure baseline is defined for bdf only")


BASELINES = {
    "baseline1": BaselineConfig("backpressure", "full", "bdf"),
    "baseline2": BaselineConfig("csit_only", "full", "df"),
    "baseline3": BaselineConfig("csit_only", "half", "bdf"),
    "baseline4": BaselineConfig("backpressure", "half", "bdf"),
    "baseline5": BaselineConfig("csit_only", "half", "df"),
}


def _sr_rate(csi: GlobalCsi, m: int, n_sr: int, power: float, params: PolicyParams):
    gains = _positive_gains(svd(csi.h_sr[m]).sigma, n_sr)
    if gains.size == 0 or power <= 0:
        return 0.0
    return params.frame_symbols * water_fill(gains, power).achieved_rate


def _rd_rate(
    csi: GlobalCsi,
    n: int,
    n_rd: int,
    power: float,
    params: PolicyParams,
    rx_relay: int | None = None,
    n_sr: int = 0,
):
    """Relay->destination rate; nulling applied when rx_relay is given."""
    if n_rd < 1 or power <= 0:
        return 0.0
    if rx_relay is None or rx_relay == n:
        h_eff = csi.h_rd[n]
    else:
        decorr = svd(csi.h_sr[rx_relay]).u[:, :n_sr].conj().T
        basis = rd_null_basis(decorr, csi.h_rr[(n, rx_relay)])
        h_eff = csi.h_rd[n] @ basis
    gains = _positive_gains(svd(h_eff).sigma, n_rd)
    if gains.size == 0:
        return 0.0
    return params.frame_symbols * water_fill(gains, power).achieved_rate


def _pk(bits: float, params: PolicyParams) -> int:
    return int(bits // params.packet_bits)


@dataclass(frozen=True)
class _Candidate:
    score: float
    m: int | None
    n: int | None
    n_sr: int
    n_rd: int
    sr_rate: float
    rd_rate: float
    sr_power: float
    rd_power: float


def _bdf_candidates(q, csi, cfg, p_s, p_r, params, weight):
    """Enumerate (rx, tx, streams) options shared by the bdf baselines.

    `weight(sr_pk, rd_pk, m, n)` scores a candidate from its packet rates;
    enumeration order fixes tie-breaking (idle, rx-only, tx-only, pairs).
    """
    m_count = len(csi.h_sr)
    n_r, n_t = csi.h_sr[0].shape
    n_min = min(n_t, n_r)
    full = cfg.duplex == "full"
    cands = [_Candidate(weight(0, 0, None, None), None, None, 0, 0, 0.0, 0.0, 0.0, 0.0)]
    for m in range(m_count):
        for n_sr in range(1, n_min + 1):
            sr = _sr_rate(csi, m, n_sr, p_s, params)
            cands.append(
                _Candidate(
                    weight(_pk(sr, params), 0, m, None), m, None, n_sr, 0, sr, 0.0, p_s, 0.0
                )
            )
    n_rd_free = min(n_t, n_r)
    for n in range(m_count):
        rd = _rd_rate(csi, n, n_rd_free, p_r, params)
        cands.append(
            _Candidate(
                weight(0, _pk(rd, params), None, n), None, n, 0, n_rd_free, 0.0, rd, 0.0, p_r
            )
        )
    for m in range(m_count):
        for n in range(m_count):
            if m == n and not full:
                continue
            for n_sr in range(1, n_min + 1):
                n_rd = n_rd_free if full else min(n_t, n_r - n_sr)
                if n_rd < 1:
                    continue
                sr = _sr_rate(csi, m, n_sr, p_s, params)
                try:
                    rd = _rd_rate(
                        csi, n, n_rd, p_r, params,
                        rx_relay=None if full else m, n_sr=n_sr,
                    )
                except NullingInfeasibleError:
                    continue
                cands.append(
                    _Candidate(
                        weight(_pk(sr, params), _pk(rd, params), m, n),
                        m, n, n_sr, n_rd, sr, rd, p_s, p_r,
                    )
                )
    return cands


def _decide(cands) -> AuctionOutcome:
    best = cands[0]
    for c in cands[1:]:
        if c.score > best.score + 1e-12:
            best = c
    sr_on = best.m is not None and _nonzero(best.sr_rate)
    rd_on = best.n is not None and _nonzero(best.rd_rate)
    return AuctionOutcome(
        m_star=best.m if sr_on else None,
        n_star=best.n if rd_on else None,
        n_sr=best.n_sr if sr_on else 0,
        n_rd=best.n_rd if rd_on else 0,
        sr_power=best.sr_power if sr_on else 0.0,
        rd_power=best.rd_power if rd_on else 0.0,
        sr_rate_bits=best.sr_rate if sr_on else 0.0,
        rd_rate_bits=best.rd_rate if rd_on else 0.0,
        winning_bid=0.0,
    )


def _nonzero(rate: float) -> bool:
    return rate > 0.0


def backpressure_decide(
    q: QueueState,
    csi: GlobalCsi,
    cfg: BaselineConfig,
    p_s: float,
    p_r: float,
    params: PolicyParams,
) -> AuctionOutcome:
    """Differential-backlog-weighted rate maximization at full power."""

    def weight(sr_pk, rd_pk, m, n):
        w = 0.0
        if m is not None:
            w += max(0, q.q_s - q.q_relay[m]) * sr_pk
        if n is not None:
            w += q.q_relay[n] * rd_pk
        return w

    return _decide(_bdf_candidates(q, csi, cfg, p_s, p_r, params, weight))


def csit_only_decide(
    csi: GlobalCsi,
    q: QueueState,
    cfg: BaselineConfig,
    p_s: float,
    p_r: float,
    params: PolicyParams,
) -> AuctionOutcome:
    """Channel-only scheduling: rate-sum for bdf, bottleneck relay for df."""
    if cfg.protocol == "bdf":

        def weight(sr_pk, rd_pk, m, n):
            return float(sr_pk + rd_pk)

        return _decide(_bdf_candidates(q, csi, cfg, p_s, p_r, params, weight))

    # traditional decode-and-forward through one relay; half-duplex time
    # shares the frame between the hops
    m_count = len(csi.h_sr)
    n_r, n_t = csi.h_sr[0].shape
    n_streams = min(n_t, n_r)
    duty = 0.5 if cfg.duplex == "half" else 1.0
    best, best_rate = None, 0.0
    for m in range(m_count):
        r1 = _sr_rate(csi, m, n_streams, p_s, params)
        r2 = _rd_rate(csi, m, n_streams, p_r, params)
        rate = duty * min(r1, r2)
        if rate > best_rate + 1e-12:
            best, best_rate = m, rate
    if best is None:
        return AuctionOutcome.idle()
    return AuctionOutcome(
        m_star=best,
        n_star=best,
        n_sr=n_streams,
        n_rd=n_streams,
        sr_power=duty * p_s,
        rd_power=duty * p_r,
        sr_rate_bits=best_rate,
        rd_rate_bits=best_rate,
        winning_bid=0.0,
    )


def baseline_decide(
    q: QueueState,
    csi: GlobalCsi,
    cfg: BaselineConfig,
    p_s: float,
    p_r: float,
    params: PolicyParams,
) -> AuctionOutcome:
    if cfg.policy == "backpressure":
        return backpressure_decide(q, csi, cfg, p_s, p_r, params)
    return csit_only_decide(csi, q, cfg, p_s, p_r, params)
