"""Exact average-cost solver for tiny discretized relay instances.

Fading is frozen to a finite set of per-link channel states, powers to a
small grid, and queues live in packets, so the frame dynamics become a
finite Markov decision process on the queue vector with the channel
averaged out.  Relative value iteration (with an aperiodicity damping)
solves the dual-priced problem exactly; stationary policies are evaluated
by solving for their stationary distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .auction import LagrangeMultipliers, PerNodeValueTable
from .phy import NullingInfeasibleError, _positive_gains, rd_null_basis, svd, water_fill
from .traffic import GlobalCsi


@dataclass(frozen=True)
class Action:
    """One enumerable frame action: receive relay, transmit relay, streams, powers."""

    m: int | None
    n: int | None
    n_sr: int
    p_sr: float
    p_rd: float


@dataclass
class DiscreteInstance:
    """Finite CSI/arrival/power discretization of the relay control problem."""

    n_relays: int
    n_t: int
    n_r: int
    n_q: int
    csi_states: tuple
    csi_probs: np.ndarray
    arrival_values: np.ndarray
    arrival_probs: np.ndarray
    power_levels: tuple
    packet_bits: float
    frame_symbols: float
    state_cap: int = 10_000

    def __post_init__(self):
        self.csi_probs = np.asarray(self.csi_probs, dtype=np.float64)
        self.arrival_values = np.asarray(self.arrival_values, dtype=np.int64)
        self.arrival_probs = np.asarray(self.arrival_probs, dtype=np.float64)
        for name, p in (("csi", self.csi_probs), ("arrival", self.arrival_probs)):
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} probabilities sum to {p.sum()}, not 1")
        n_states = (self.n_q + 1) ** (self.n_relays + 1)
        if n_states > self.state_cap:
            raise ValueError(
                f"queue state count {n_states} exceeds cap {self.state_cap}"
            )
        if 0.0 not in self.power_levels:
            raise ValueError("power_levels must include 0")

    @property
    def arrival_mean(self) -> float:
        return float(self.arrival_values @ self.arrival_probs)


@dataclass(frozen=True)
class SolveResult:
    theta: float
    value: np.ndarray  # over reachable queue states
    policy: np.ndarray  # (n_states, n_csi) action indices
    states: tuple  # queue vectors, aligned with value rows
    span_trace: tuple
    iterations: int


def enumerate_actions(inst: DiscreteInstance) -> list:
    """Canonical action list: idle, receive-only, transmit-only, and pairs."""
    n_min = min(inst.n_t, inst.n_r)
    pos_levels = [p for p in inst.power_levels if p > 0]
    acts = [Action(None, None, 0, 0.0, 0.0)]
    for m in range(inst.n_relays):
        for n_sr in range(1, n_min + 1):
            for p in pos_levels:
                acts.append(Action(m, None, n_sr, p, 0.0))
    for n in range(inst.n_relays):
        for p in pos_levels:
            acts.append(Action(None, n, 0, 0.0, p))
    for m in range(inst.n_relays):
        for n in range(inst.n_relays):
            if m == n:
                continue
            for n_sr in range(1, n_min + 1):
                if min(inst.n_t, inst.n_r - n_sr) < 1:
                    continue
                for p_sr in pos_levels:
                    for p_rd in pos_levels:
                        acts.append(Action(m, n, n_sr, p_sr, p_rd))
    return acts


def _packets(rate_spectral: float, inst: DiscreteInstance) -> int:
    return int(inst.frame_symbols * rate_spectral // inst.packet_bits)


class CompiledInstance:
    """Per-(channel state, action) packet rates, shared by solver and replay."""

    def __init__(self, inst: DiscreteInstance):
        self.inst = inst
        self.actions = enumerate_actions(inst)
        n_h, n_a = len(inst.csi_states), len(self.actions)
        self.sr_pk = np.zeros((n_h, n_a), dtype=np.int64)
        self.rd_pk = np.zeros((n_h, n_a), dtype=np.int64)
        self.feasible = np.ones((n_h, n_a), dtype=bool)
        for h, csi in enumerate(inst.csi_states):
            sr_cache = {}
            for a, act in enumerate(self.actions):
                if act.m is not None and act.p_sr > 0:
                    key = (act.m, act.n_sr, act.p_sr)
                    if key not in sr_cache:
                        gains = _positive_gains(svd(csi.h_sr[act.m]).sigma, act.n_sr)
                        rate = (
                            water_fill(gains, act.p_sr).achieved_rate if gains.size else 0.0
                        )
                        sr_cache[key] = _packets(rate, inst)
                    self.sr_pk[h, a] = sr_cache[key]
                if act.n is not None and act.p_rd > 0:
                    try:
                        if act.m is None:
                            basis = None
                        else:
                            decorr = svd(csi.h_sr[act.m]).u[:, : act.n_sr].conj().T
                            basis = rd_null_basis(decorr, csi.h_rr[(act.n, act.m)])
                        h_eff = (
                            csi.h_rd[act.n] if basis is None else csi.h_rd[act.n] @ basis
                        )
                        n_rd = min(inst.n_t, inst.n_r - act.n_sr)
                        gains = _positive_gains(svd(h_eff).sigma, n_rd)
                        rate = (
                            water_fill(gains, act.p_rd).achieved_rate if gains.size else 0.0
                        )
                        self.rd_pk[h, a] = _packets(rate, inst)
                    except NullingInfeasibleError:
                        self.feasible[h, a] = False

    def effect(self, q_vec: tuple, h: int, a: int):
        """Realized packet moves and powers for action a in state (q_vec, h).

        Scheduled source->relay packets respect the receiving buffer's room
        (the scheduler knows the relay queue), and power is charged only
        when its link actually moves packets.
        """
        act = self.actions[a]
        q_s, relays = q_vec[0], list(q_vec[1:])
        sr = 0
        if act.m is not None:
            sr = min(self.sr_pk[h, a], q_s, self.inst.n_q - relays[act.m])
        rd = min(self.rd_pk[h, a], relays[act.n]) if act.n is not None else 0
        p_sr = act.p_sr if sr > 0 else 0.0
        p_rd = act.p_rd if rd > 0 else 0.0
        return sr, rd, p_sr, p_rd

    def successors(self, q_vec: tuple, h: int, a: int):
        """Arrival-branch successor queue vectors (aligned with arrival_probs)."""
        inst = self.inst
        act = self.actions[a]
        sr, rd, _, _ = self.effect(q_vec, h, a)
        relays = list(q_vec[1:])
        if act.n is not None:
            relays[act.n] -= rd
        if act.m is not None and sr:
            relays[act.m] += sr
        q_s_mid = q_vec[0] - sr
        out = []
        for x in inst.arrival_values:
            out.append((min(q_s_mid + int(x), inst.n_q),) + tuple(relays))
        return out

    def stage_cost(self, q_vec: tuple, h: int, a: int, lm: LagrangeMultipliers) -> float:
        sr, rd, p_sr, p_rd = self.effect(q_vec, h, a)
        act = self.actions[a]
        cost = float(sum(q_vec))
        if q_vec[0] == self.inst.n_q:
            cost += lm.gamma_sd
        cost += lm.gamma_sp * p_sr
        if act.n is not None:
            cost += lm.gamma_rp[act.n] * p_rd
        return cost


def reachable_states(comp: CompiledInstance) -> list:
    """Queue vectors reachable from all-empty under any action/channel/arrival."""
    inst = comp.inst
    start = (0,) * (inst.n_relays + 1)
    seen = {start}
    frontier = [start]
    n_h, n_a = len(inst.csi_states), len(comp.actions)
    while frontier:
        q_vec = frontier.pop()
        for h in range(n_h):
            for a in range(n_a):
                if not comp.feasible[h, a]:
                    continue
                for nxt in comp.successors(q_vec, h, a):
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
    return sorted(seen)


@dataclass
class _Tables:
    """Dense (state, csi, action) arrays for vectorized Bellman sweeps."""

    states: list
    index: dict
    cost: np.ndarray  # (S, H, A)
    nxt: np.ndarray  # (S, H, A, X) successor state indices


def _compile_tables(comp: CompiledInstance, lm: LagrangeMultipliers) -> _Tables:
    inst = comp.inst
    states = reachable_states(comp)
    index = {s: i for i, s in enumerate(states)}
    n_s, n_h, n_a = len(states), len(inst.csi_states), len(comp.actions)
    n_x = len(inst.arrival_values)
    cost = np.zeros((n_s, n_h, n_a))
    nxt = np.zeros((n_s, n_h, n_a, n_x), dtype=np.int64)
    for si, q_vec in enumerate(states):
        for h in range(n_h):
            for a in range(n_a):
                if not comp.feasible[h, a]:
                    cost[si, h, a] = np.inf
                    continue
                cost[si, h, a] = comp.stage_cost(q_vec, h, a, lm)
                for k, nq in enumerate(comp.successors(q_vec, h, a)):
                    nxt[si, h, a, k] = index[nq]
    return _Tables(states=states, index=index, cost=cost, nxt=nxt)


def build_kernel(
    inst: DiscreteInstance,
    policy: np.ndarray,
    comp: CompiledInstance | None = None,
    states: list | None = None,
) -> np.ndarray:
    """Channel-averaged queue transition matrix of a stationary policy.

    policy[state_index, csi_index] is an action index; rows sum to one.
    """
    comp = comp or CompiledInstance(inst)
    states = states or reachable_states(comp)
    index = {s: i for i, s in enumerate(states)}
    n_s = len(states)
    kernel = np.zeros((n_s, n_s))
    for si, q_vec in enumerate(states):
        for h, ph in enumerate(inst.csi_probs):
            a = int(policy[si, h])
            for x_prob, nq in zip(inst.arrival_probs, comp.successors(q_vec, h, a)):
                kernel[si, index[nq]] += ph * x_prob
    return kernel


def relative_value_iteration(
    inst: DiscreteInstance,
    lm: LagrangeMultipliers,
    tol: float = 1e-9,
    max_iter: int = 20_000,
    damping: float = 0.5,
    comp: CompiledInstance | None = None,
) -> SolveResult:
    """Solve the channel-averaged Bellman equation on reachable queue states.

    Iterates a damped Bellman operator, re-pinning the all-empty reference
    state each sweep; stops when the span of the undamped Bellman residual
    falls below tol.  The channel expectation is taken outside the per-state
    minimization, so the policy adapts to the channel realization.
    """
    comp = comp or CompiledInstance(inst)
    tables = _compile_tables(comp, lm)
    n_s = len(tables.states)
    ref = tables.index[(0,) * (inst.n_relays + 1)]
    v = np.zeros(n_s)
    probs_h = inst.csi_probs
    arr_p = inst.arrival_probs
    span_trace = []
    theta = math.nan
    for it in range(max_iter):
        ev = v[tables.nxt] @ arr_p  # (S, H, A)
        tot = tables.cost + ev
        per_h = tot.min(axis=2)  # (S, H)
        tv = per_h @ probs_h  # (S,)
        resid = tv - v
        span = float(resid.max() - resid.min())
        span_trace.append(span)
        theta = float(0.5 * (resid.max() + resid.min()))
        if span <= tol:
            pol = tot.argmin(axis=2)
            return SolveResult(
                theta=theta,
                value=v - v[ref],
                policy=pol,
                states=tuple(tables.states),
                span_trace=tuple(span_trace),
                iterations=it + 1,
            )
        v = (1.0 - damping) * v + damping * tv
        v = v - v[ref]
    raise RuntimeError(
        f"relative value iteration did not reach span<={tol} in {max_iter} sweeps; "
        f"last spans {span_trace[-5:]}"
    )


def _stationary_distribution(kernel: np.ndarray):
    """Exact stationary distribution; raises if more than one recurrent class."""
    import networkx as nx

    g = nx.DiGraph()
    n = kernel.shape[0]
    g.add_nodes_from(range(n))
    src, dst = np.nonzero(kernel > 0)
    g.add_edges_from(zip(src.tolist(), dst.tolist()))
    sccs = list(nx.strongly_connected_components(g))
    recurrent = []
    for comp_states in sccs:
        outside = [
            j
            for i in comp_states
            for j in np.nonzero(kernel[i] > 0)[0]
            if j not in comp_states
        ]
        if not outside:
            recurrent.append(sorted(comp_states))
    if len(recurrent) != 1:
        raise RuntimeError(
            f"chain is reducible: {len(recurrent)} recurrent classes {recurrent}"
        )
    cls = recurrent[0]
    sub = kernel[np.ix_(cls, cls)]
    n = len(cls)
    a = np.vstack([sub.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi_sub, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.zeros(kernel.shape[0])
    pi[cls] = np.maximum(pi_sub, 0.0)
    pi /= pi.sum()
    return pi


def evaluate_policy(
    inst: DiscreteInstance,
    lm: LagrangeMultipliers,
    policy: np.ndarray,
    comp: CompiledInstance | None = None,
) -> dict:
    """Exact steady-state cost, delay, drop rate and powers of a policy.

    The chain is restricted to states the policy actually reaches from the
    all-empty start before the single-recurrent-class check.
    """
    comp = comp or CompiledInstance(inst)
    states = reachable_states(comp)
    index = {s: i for i, s in enumerate(states)}
    start = (0,) * (inst.n_relays + 1)
    seen = {start}
    frontier = [start]
    while frontier:
        q_vec = frontier.pop()
        si = index[q_vec]
        for h in range(len(inst.csi_states)):
            for nq in comp.successors(q_vec, h, int(policy[si, h])):
                if nq not in seen:
                    seen.add(nq)
                    frontier.append(nq)
    kept = [s for s in states if s in seen]
    sub_policy = np.stack([policy[index[s]] for s in kept])
    states = kept
    policy = sub_policy
    kernel = build_kernel(inst, policy, comp=comp, states=states)
    pi = _stationary_distribution(kernel)
    lam = inst.arrival_mean
    avg_cost = avg_occ = drop = p_src = thr = 0.0
    p_relay = np.zeros(inst.n_relays)
    for si, q_vec in enumerate(states):
        if pi[si] == 0.0:
            continue
        for h, ph in enumerate(inst.csi_probs):
            w = pi[si] * ph
            a = int(policy[si, h])
            sr, rd, p_sr, p_rd = comp.effect(q_vec, h, a)
            avg_cost += w * comp.stage_cost(q_vec, h, a, lm)
            p_src += w * p_sr
            thr += w * rd
            act = comp.actions[a]
            if act.n is not None:
                p_relay[act.n] += w * p_rd
        avg_occ += pi[si] * sum(q_vec)
        drop += pi[si] * (q_vec[0] == inst.n_q)
    return {
        "avg_cost": avg_cost,
        "avg_delay_frames": avg_occ / lam if lam > 0 else 0.0,
        "avg_occupancy": avg_occ,
        "drop_rate": drop,
        "avg_power_src": p_src,
        "avg_power_relay": p_relay,
        "throughput_pkts_per_frame": thr,
        "stationary": pi,
        "states": states,
    }


def greedy_policy_for_table(
    inst: DiscreteInstance,
    lm: LagrangeMultipliers,
    v: PerNodeValueTable,
    comp: CompiledInstance | None = None,
    states: list | None = None,
) -> np.ndarray:
    """One-step lookahead policy induced by a separable value table."""
    comp = comp or CompiledInstance(inst)
    states = states or reachable_states(comp)
    n_h, n_a = len(inst.csi_states), len(comp.actions)
    pol = np.zeros((len(states), n_h), dtype=np.int64)
    for si, q_vec in enumerate(states):
        for h in range(n_h):
            best, best_a = math.inf, 0
            for a in range(n_a):
                if not comp.feasible[h, a]:
                    continue
                val = comp.stage_cost(q_vec, h, a, lm)
                for x_prob, nq in zip(inst.arrival_probs, comp.successors(q_vec, h, a)):
                    val += x_prob * _separable_value(v, nq)
                if val < best - 1e-15:
                    best, best_a = val, a
            pol[si, h] = best_a
    return pol


def _separable_value(v: PerNodeValueTable, q_vec: tuple) -> float:
    return float(sum(v.values[node, q] for node, q in enumerate(q_vec)))


def bellman_residual(
    inst: DiscreteInstance,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    comp: CompiledInstance | None = None,
) -> dict:
    """Bellman-equation mismatch of a separable table on representative states.

    For each single-nonzero queue vector, compares the one-step optimal
    value under the table against the table's own value, after removing the
    best common offset.
    """
    comp = comp or CompiledInstance(inst)
    n_nodes = inst.n_relays + 1
    residuals = {}
    raw = []
    for node in range(n_nodes):
        for q in range(1, inst.n_q + 1):
            q_vec = tuple(q if i == node else 0 for i in range(n_nodes))
            rhs = 0.0
            for h, ph in enumerate(inst.csi_probs):
                best = math.inf
                for a in range(len(comp.actions)):
                    if not comp.feasible[h, a]:
                        continue
                    val = comp.stage_cost(q_vec, h, a, lm)
                    for x_prob, nq in zip(
                        inst.arrival_probs, comp.successors(q_vec, h, a)
                    ):
                        val += x_prob * _separable_value(v, nq)
                    best = min(best, val)
                rhs += ph * best
            raw.append(rhs - _separable_value(v, q_vec))
            residuals[(node, q)] = raw[-1]
    theta_hat = float(np.mean(raw))
    residuals = {k: val - theta_hat for k, val in residuals.items()}
    max_res = max(abs(r) for r in residuals.values())
    return {
        "per_state": residuals,
        "max_residual": max_res,
        "theta_hat": theta_hat,
    }


def make_tiny_instance(
    seed: int = 7,
    n_relays: int = 2,
    n_t: int = 1,
    n_r: int = 2,
    n_q: int = 2,
    states_per_link: int = 2,
    power_levels=(0.0, 1.0, 2.0, 4.0),
    packet_bits: float = 1000.0,
    frame_symbols: float = 1000.0,
    arrival_values=(0, 1),
    arrival_probs=(0.2, 0.8),
    csi_scale: float = 1.0,
    state_cap: int = 10_000,
) -> DiscreteInstance:
    """Frozen small instance: per-link channel sets combined into joint states."""
    rng = np.random.default_rng(seed)

    def draw(rows, cols):
        return (
            csi_scale
            * (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols)))
            / np.sqrt(2.0)
        )

    link_sets = {}
    for m in range(n_relays):
        link_sets[("sr", m)] = [draw(n_r, n_t) for _ in range(states_per_link)]
        link_sets[("rd", m)] = [draw(n_t, n_r) for _ in range(states_per_link)]
    for t in range(n_relays):
        for r in range(n_relays):
            if t != r:
                link_sets[("rr", t, r)] = [draw(n_r, n_r) for _ in range(states_per_link)]

    keys = sorted(link_sets, key=str)
    joint_states, joint_probs = [], []
    for combo in itertools.product(range(states_per_link), repeat=len(keys)):
        chosen = dict(zip(keys, combo))
        h_sr = tuple(link_sets[("sr", m)][chosen[("sr", m)]] for m in range(n_relays))
        h_rd = tuple(link_sets[("rd", m)][chosen[("rd", m)]] for m in range(n_relays))
        h_rr = {
            (t, r): link_sets[("rr", t, r)][chosen[("rr", t, r)]]
            for t in range(n_relays)
            for r in range(n_relays)
            if t != r
        }
        joint_states.append(GlobalCsi(h_sr=h_sr, h_rd=h_rd, h_rr=h_rr))
        joint_probs.append(1.0 / states_per_link ** len(keys))
    return DiscreteInstance(
        n_relays=n_relays,
        n_t=n_t,
        n_r=n_r,
        n_q=n_q,
        csi_states=tuple(joint_states),
        csi_probs=np.asarray(joint_probs),
        arrival_values=np.asarray(arrival_values),
        arrival_probs=np.asarray(arrival_probs),
        power_levels=tuple(power_levels),
        packet_bits=packet_bits,
        frame_symbols=frame_symbols,
        state_cap=state_cap,
    )
