"""Two-timescale online learning of value tables and Lagrange multipliers.

Value tables move on the fast timescale from the realized winning bid,
multipliers drift on slow timescales against their constraint slacks.
The canonical update touches a table cell only when the full queue vector
is that cell's representative state (its node at q, every other queue
empty); the optional every-visit mode relaxes the indicator to the node's
own component and uses per-cell visit counts for the step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .auction import AuctionOutcome, LagrangeMultipliers, PerNodeValueTable
from .traffic import QueueState


@dataclass(frozen=True)
class StepSchedule:
    """Polynomial step sizes c / (1 + t)^a for values, powers, drop rate."""

    exponents: tuple
    constants: tuple

    def eps_v(self, t: int) -> float:
        return self.constants[0] / (1.0 + t) ** self.exponents[0]

    def eps_p(self, t: int) -> float:
        return self.constants[1] / (1.0 + t) ** self.exponents[1]

    def eps_d(self, t: int) -> float:
        return self.constants[2] / (1.0 + t) ** self.exponents[2]


def make_schedule(
    family: str = "polynomial",
    exponents=(0.6, 0.8, 0.9),
    constants=(1.0, 1.0, 1.0),
) -> StepSchedule:
    """Validated step-size schedule.

    For the polynomial family the admissible exponent box is
    0.5 < a_v < a_p <= a_d <= 1: each sequence then diverges in sum,
    is square-summable, and the power/drop steps vanish relative to the
    value step.
    """
    if family != "polynomial":
        raise ValueError(f"unknown schedule family {family!r}")
    a_v, a_p, a_d = exponents
    problems = []
    if not a_v > 0.5:
        problems.append(f"a_v={a_v} <= 0.5: value steps not square-summable")
    if not a_p > a_v:
        problems.append(f"a_p={a_p} <= a_v={a_v}: eps_p/eps_v does not vanish")
    if not a_d > a_v:
        problems.append(f"a_d={a_d} <= a_v={a_v}: eps_d/eps_v does not vanish")
    if not a_p <= a_d:
        problems.append(f"a_p={a_p} > a_d={a_d}: drop step must be the slowest")
    if not a_d <= 1.0:
        problems.append(f"a_d={a_d} > 1: steps no longer sum to infinity")
    if problems:
        raise ValueError("inadmissible schedule: " + "; ".join(problems))
    if any(c <= 0 for c in constants):
        raise ValueError("schedule constants must be positive")
    return StepSchedule(exponents=tuple(exponents), constants=tuple(constants))


@dataclass
class LearnerState:
    v: PerNodeValueTable
    lm: LagrangeMultipliers
    t: int = 0
    visit_counts: np.ndarray = None
    mode: str = "per_paper"  # per_paper | every_visit | synthetic
    monotone: bool = True  # non-per-paper modes: project rows to nondecreasing
    theta_hat: float = 0.0  # running average-cost estimate (synthetic mode)

    def __post_init__(self):
        if self.visit_counts is None:
            self.visit_counts = np.zeros_like(self.v.values, dtype=np.int64)
        if self.mode not in ("per_paper", "every_visit", "synthetic"):
            raise ValueError(f"unknown update mode {self.mode!r}")

    @classmethod
    def fresh(
        cls, n_relays: int, n_q: int, mode: str = "per_paper", monotone: bool = True
    ) -> "LearnerState":
        return cls(
            v=PerNodeValueTable.zeros(n_relays, n_q),
            lm=LagrangeMultipliers.ones(n_relays),
            mode=mode,
            monotone=monotone,
        )


def _isotonic(row: np.ndarray) -> None:
    """In-place pool-adjacent-violators fit to a nondecreasing row.

    Entry 0 is the pinned reference and acts as a floor for the rest.
    """
    n = row.size
    vals = row[1:].copy()
    blocks = [[i] for i in range(n - 1)]
    means = list(vals)
    i = 0
    while i < len(blocks) - 1:
        if means[i] > means[i + 1] + 1e-15:
            merged = blocks[i] + blocks[i + 1]
            mean = sum(vals[j] for j in merged) / len(merged)
            blocks[i : i + 2] = [merged]
            means[i : i + 2] = [mean]
            i = max(i - 1, 0)
        else:
            i += 1
    for block, mean in zip(blocks, means):
        for j in block:
            row[1 + j] = mean
    np.maximum(row[1:], row[0], out=row[1:])


def _representative_cell(q: QueueState):
    """(node_row, q) if the queue vector has exactly one nonzero component."""
    vec = q.as_vector()
    nz = [i for i, x in enumerate(vec) if x > 0]
    if len(nz) == 1:
        return nz[0], vec[nz[0]]
    return None


def update_values(
    ls: LearnerState,
    q_t: QueueState,
    outcome: AuctionOutcome,
    sched: StepSchedule,
    rep_bids: dict | None = None,
) -> LearnerState:
    """Move value cells toward the sampled one-step target.

    Target for cell (node, q): drop penalty at a full source buffer, plus
    the occupancy q, plus the frame's winning bid.  Row entries at q = 0
    stay pinned to zero.

    per_paper: only the cell whose representative state is the realized
    queue vector moves, driven by the realized winning bid.  every_visit:
    every occupied cell moves with the realized bid.  synthetic: the source
    cell moves toward its representative-state target while each relay cell
    absorbs its representative-state Bellman residual; both are sampled
    per frame from counterfactual single-nonzero states (rep_bids).
    """
    n_q = ls.v.n_q

    def bump(node: int, q: int, eps: float, bid: float, drop_term: float):
        cur = ls.v.values[node, q]
        target = drop_term + q + bid
        ls.v.values[node, q] = cur + eps * (target - cur)
        ls.visit_counts[node, q] += 1

    src_full_term = ls.lm.gamma_sd if q_t.q_s == n_q else 0.0
    if ls.mode == "per_paper":
        cell = _representative_cell(q_t)
        if cell is not None:
            node, q = cell
            bump(node, q, sched.eps_v(ls.t), outcome.winning_bid, src_full_term)
    elif ls.mode == "every_visit":
        for node, q in enumerate(q_t.as_vector()):
            if q > 0:
                bump(node, q, sched.eps_v(ls.visit_counts[node, q]),
                     outcome.winning_bid, src_full_term)
                if ls.monotone:
                    _isotonic(ls.v.values[node])
    else:
        if rep_bids is None:
            raise ValueError("synthetic mode needs per-node representative bids")
        if q_t.q_s > 0:
            q = q_t.q_s
            eps = sched.eps_v(ls.visit_counts[0, q])
            ls.v.values[0, q] += eps * (rep_bids["src_target"] - ls.v.values[0, q])
            ls.visit_counts[0, q] += 1
            if ls.monotone:
                _isotonic(ls.v.values[0])
        for relay, q in enumerate(q_t.q_relay):
            if q > 0:
                node = 1 + relay
                eps = sched.eps_v(ls.visit_counts[node, q])
                ls.v.values[node, q] += eps * rep_bids["relay_residual"][relay]
                ls.visit_counts[node, q] += 1
                if ls.monotone:
                    _isotonic(ls.v.values[node])
    return ls


def update_theta(ls: LearnerState, frame_cost: float, sched: StepSchedule) -> None:
    """Track the average Lagrangian cost per frame on the fast timescale."""
    ls.theta_hat += sched.eps_v(ls.t) * (frame_cost - ls.theta_hat)


@dataclass(frozen=True)
class FrameObservation:
    """Realized per-frame quantities the multiplier updates react to."""

    src_full: bool
    src_tx_power: float
    relay_tx_power: np.ndarray


@dataclass(frozen=True)
class ConstraintTargets:
    drop_rate: float
    src_power: float
    relay_power: float


def update_lms(
    ls: LearnerState,
    frame_obs: FrameObservation,
    sched: StepSchedule,
    constraints: ConstraintTargets,
) -> LearnerState:
    """Projected subgradient steps on each multiplier's own slack."""
    t = ls.t
    lm = ls.lm
    lm.gamma_sd = max(
        0.0, lm.gamma_sd + sched.eps_d(t) * (float(frame_obs.src_full) - constraints.drop_rate)
    )
    lm.gamma_sp = max(
        0.0, lm.gamma_sp + sched.eps_p(t) * (frame_obs.src_tx_power - constraints.src_power)
    )
    lm.gamma_rp = np.maximum(
        0.0,
        lm.gamma_rp + sched.eps_p(t) * (frame_obs.relay_tx_power - constraints.relay_power),
    )
    return ls


@dataclass(frozen=True)
class LearningSnapshot:
    t: int
    values: np.ndarray
    lm: np.ndarray
    avg_drop: float
    avg_src_power: float
    avg_relay_power: np.ndarray


def convergence_report(
    snapshots,
    constraints: ConstraintTargets,
    window: int = 2,
    value_tol: float = 0.01,
    slack_tol: float = 0.05,
) -> dict:
    """Empirical convergence check over the trailing snapshot window.

    value_delta: largest table-entry movement across the window, relative
    to the table's overall magnitude.  lm_slack: worst relative violation
    of the averaged constraint functionals.  Both must fall below their
    thresholds for `converged`.
    """
    if len(snapshots) < window:
        raise ValueError(
            f"need at least window={window} snapshots, got {len(snapshots)}"
        )
    tail = snapshots[-window:]
    stack = np.stack([s.values for s in tail])
    scale = max(1.0, float(np.max(np.abs(stack))))
    value_delta = float(np.max(stack.max(axis=0) - stack.min(axis=0)) / scale)

    last = tail[-1]
    slacks = [
        max(0.0, last.avg_drop - constraints.drop_rate) / max(constraints.drop_rate, 1e-12),
        max(0.0, last.avg_src_power - constraints.src_power) / max(constraints.src_power, 1e-12),
    ]
    for p in np.atleast_1d(last.avg_relay_power):
        slacks.append(
            max(0.0, p - constraints.relay_power) / max(constraints.relay_power, 1e-12)
        )
    lm_slack = float(max(slacks))
    return {
        "value_delta": value_delta,
        "lm_slack": lm_slack,
        "converged": value_delta < value_tol and lm_slack < slack_tol,
    }
