"""Frame-loop simulator: policies, queues, metrics, sweeps, oracle replay.

Every run is fully determined by its config and seed.  Per frame: draw the
channel, let the configured policy pick an action, move packets with the
queue law, then (for the learned policy) apply the online updates.  Delay
is reported in frames as mean occupancy over mean arrivals.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .auction import (
    AuctionOutcome,
    LagrangeMultipliers,
    PerNodeValueTable,
    PolicyParams,
    local_state,
    representative_bids,
    run_auction,
)
from .baselines import baseline_decide
from .config import ExperimentConfig
from .learning import (
    ConstraintTargets,
    FrameObservation,
    LearnerState,
    LearningSnapshot,
    convergence_report,
    make_schedule,
    update_lms,
    update_theta,
    update_values,
)
from .oracle import (
    Action,
    CompiledInstance,
    DiscreteInstance,
    bellman_residual,
    evaluate_policy,
    make_tiny_instance,
    reachable_states,
    relative_value_iteration,
)
from .traffic import (
    ArrivalModel,
    QueueState,
    ServiceDecision,
    sample_csi,
    step_queues,
)


@dataclass
class RunSummary:
    policy: str
    axis_value: float
    seed: int
    frames: int
    avg_delay_frames: float
    throughput_pps: float
    drop_rate: float  # time share of a full source buffer
    avg_power_src: float
    avg_power_relay: np.ndarray
    converged: bool
    avg_occupancy: float = 0.0
    drop_pkt_rate: float = 0.0  # share of arriving packets lost to overflow
    relay_overflow: int = 0
    avg_cost: float | None = None
    cost_se: float | None = None
    value_delta: float | None = None
    lm_slack: float | None = None
    lm_final: np.ndarray | None = None
    wallclock: float = 0.0

    @property
    def avg_power_relay_mean(self) -> float:
        return float(np.mean(self.avg_power_relay))

    SUMMARY_COLUMNS = (
        "policy", "axis_value", "seed", "frames", "avg_delay_frames",
        "throughput_pps", "drop_rate", "avg_power_src",
        "avg_power_relay_mean", "converged",
    )

    def summary_row(self) -> dict:
        return {
            "policy": self.policy,
            "axis_value": self.axis_value,
            "seed": self.seed,
            "frames": self.frames,
            "avg_delay_frames": self.avg_delay_frames,
            "throughput_pps": self.throughput_pps,
            "drop_rate": self.drop_rate,
            "avg_power_src": self.avg_power_src,
            "avg_power_relay_mean": self.avg_power_relay_mean,
            "converged": self.converged,
        }


@dataclass
class RunTraces:
    snapshots: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (t, node, q, value, *gammas)
    costs: np.ndarray | None = None


class _DiscreteCsiSampler:
    """Samples frozen joint channel states by their probabilities."""

    def __init__(self, inst: DiscreteInstance):
        self.inst = inst
        self.cum = np.cumsum(inst.csi_probs)

    def sample(self, rng):
        h = int(np.searchsorted(self.cum, rng.random(), side="right"))
        h = min(h, len(self.inst.csi_states) - 1)
        return self.inst.csi_states[h], h


class _PmfArrival:
    """Arrival adapter for a discrete instance's truncated pmf."""

    def __init__(self, values, probs):
        self.values = np.asarray(values, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.cum = np.cumsum(self.probs)
        self.mean_per_frame = float(self.values @ self.probs)

    def sample(self, rng):
        k = int(np.searchsorted(self.cum, rng.random(), side="right"))
        return int(self.values[min(k, len(self.values) - 1)])

    def pmf(self, tail_mass: float = 1e-6):
        return self.values, self.probs


def _decision_from_outcome(
    outcome: AuctionOutcome, q: QueueState, packet_bits: float, n_q: int,
    cap_relay_room: bool,
) -> ServiceDecision:
    sr_pk = int(outcome.sr_rate_bits // packet_bits) if outcome.m_star is not None else 0
    if cap_relay_room and outcome.m_star is not None:
        sr_pk = min(sr_pk, n_q - q.q_relay[outcome.m_star])
    rd_pk = int(outcome.rd_rate_bits // packet_bits) if outcome.n_star is not None else 0
    return ServiceDecision(
        rx_rs=outcome.m_star if sr_pk > 0 else None,
        tx_rs=outcome.n_star if rd_pk > 0 else None,
        sr_packets=sr_pk,
        rd_packets=rd_pk,
    )


class _OracleReplay:
    """Frozen oracle policy looked up by (queue state, channel index)."""

    def __init__(self, inst, comp, policy, states):
        self.comp = comp
        self.policy = policy
        self.index = {s: i for i, s in enumerate(states)}
        self.packet_bits = inst.packet_bits

    def outcome(self, q_vec, h) -> AuctionOutcome:
        a = int(self.policy[self.index[q_vec], h])
        act: Action = self.comp.actions[a]
        sr_pk = int(self.comp.sr_pk[h, a]) if act.m is not None else 0
        rd_pk = int(self.comp.rd_pk[h, a]) if act.n is not None else 0
        return AuctionOutcome(
            m_star=act.m if sr_pk > 0 else None,
            n_star=act.n if rd_pk > 0 else None,
            n_sr=act.n_sr,
            n_rd=0,
            sr_power=act.p_sr if sr_pk > 0 else 0.0,
            rd_power=act.p_rd if rd_pk > 0 else 0.0,
            sr_rate_bits=sr_pk * self.packet_bits,
            rd_rate_bits=rd_pk * self.packet_bits,
            winning_bid=0.0,
        )


def run_episode(
    cfg: ExperimentConfig,
    instance: DiscreteInstance | None = None,
    frozen_lm: LagrangeMultipliers | None = None,
    oracle_policy=None,
    initial_learner: LearnerState | None = None,
    frame_hook=None,
):
    """Simulate one seeded episode; returns (RunSummary, RunTraces).

    With a DiscreteInstance attached, channels and arrivals are drawn from
    its frozen sets (and the learned policy optimizes over its power grid),
    so runs are exactly comparable to the exact-chain solver.
    """
    cfg.validate()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.run.seed)
    m_count = cfg.system.n_relays if instance is None else instance.n_relays
    n_q = cfg.system.n_q if instance is None else instance.n_q
    p_s = p_r = cfg.constraints.power_limit

    if instance is not None:
        params = PolicyParams(
            packet_bits=instance.packet_bits,
            frame_symbols=instance.frame_symbols,
            p_max=max(instance.power_levels),
            power_mode="grid",
            power_grid=tuple(instance.power_levels),
        )
        arrival = _PmfArrival(instance.arrival_values, instance.arrival_probs)
        csi_sampler = _DiscreteCsiSampler(instance)
    else:
        params = cfg.policy_params()
        arrival = cfg.arrival_model()
        csi_sampler = None

    kind = cfg.policy.kind
    learner = None
    sched = None
    replay = None
    baseline_cfg = None
    if kind == "learned":
        learner = initial_learner or LearnerState.fresh(
            m_count, n_q, mode=cfg.learning.mode, monotone=cfg.learning.monotone
        )
        if initial_learner is None:
            g = cfg.learning.gamma_init
            learner.lm = LagrangeMultipliers(
                gamma_sd=g[0], gamma_sp=g[1], gamma_rp=np.full(m_count, g[2])
            )
        if frozen_lm is not None:
            learner.lm = frozen_lm.copy()
        sched = make_schedule(
            exponents=cfg.learning.exponents, constants=cfg.learning.constants
        )
    elif kind == "oracle_replay":
        if instance is None or oracle_policy is None or frozen_lm is None:
            raise ValueError(
                "oracle_replay needs an instance, a policy table and frozen duals"
            )
        comp = oracle_policy["comp"]
        replay = _OracleReplay(instance, comp, oracle_policy["policy"], oracle_policy["states"])
    elif kind.startswith("baseline"):
        baseline_cfg = cfg.policy.baseline()

    lm_for_cost = None
    if kind == "learned":
        lm_for_cost = learner.lm
    elif frozen_lm is not None:
        lm_for_cost = frozen_lm

    targets = ConstraintTargets(
        drop_rate=cfg.constraints.drop_target, src_power=p_s, relay_power=p_r
    )
    frames = cfg.run.frames
    burn = int(frames * cfg.run.burn_in_frac)
    q = QueueState(q_s=0, q_relay=(0,) * m_count)

    occ_sum = 0.0
    drop_frames = 0
    dropped_pkts = 0
    arrived_pkts = 0
    relay_overflow = 0
    delivered_rd = 0
    power_src_sum = 0.0
    power_relay_sum = np.zeros(m_count)
    counted = 0
    costs = [] if lm_for_cost is not None else None

    traces = RunTraces()
    snap_every = max(1, cfg.learning.snapshot_every)
    win_drop = win_psrc = 0.0
    win_prelay = np.zeros(m_count)
    win_n = 0

    for t in range(frames):
        if csi_sampler is not None:
            csi, h_idx = csi_sampler.sample(rng)
        else:
            csi, h_idx = sample_csi(rng, m_count, cfg.system.n_t, cfg.system.n_r), None

        if kind == "learned":
            outcome = run_auction(q, csi, learner.v, learner.lm, arrival, params)
        elif kind == "oracle_replay":
            outcome = replay.outcome(q.as_vector(), h_idx)
        else:
            outcome = baseline_decide(q, csi, baseline_cfg, p_s, p_r, params)

        decision = _decision_from_outcome(
            outcome, q, params.packet_bits, n_q, cap_relay_room=(kind == "learned")
        )
        x = arrival.sample(rng)
        res = step_queues(q, decision, x, n_q)

        # power is spent only when the link actually moves packets
        p_sr_real = outcome.sr_power if res.sr_delivered > 0 else 0.0
        p_rd_real = outcome.rd_power if res.rd_delivered > 0 else 0.0
        src_full = q.q_s == n_q
        if frame_hook is not None:
            frame_hook(t, q, outcome, x, res, p_sr_real, p_rd_real)

        if t >= burn:
            counted += 1
            occ_sum += q.occupancy()
            drop_frames += src_full
            dropped_pkts += res.dropped
            arrived_pkts += x
            relay_overflow += res.relay_dropped
            delivered_rd += res.rd_delivered
            power_src_sum += p_sr_real
            if outcome.n_star is not None:
                power_relay_sum[outcome.n_star] += p_rd_real
        if costs is not None:
            lmc = lm_for_cost
            c = q.occupancy() + (lmc.gamma_sd if src_full else 0.0)
            c += lmc.gamma_sp * p_sr_real
            if outcome.n_star is not None:
                c += lmc.gamma_rp[outcome.n_star] * p_rd_real
            costs.append(c)

        if kind == "learned":
            rep = None
            if learner.mode == "synthetic":
                locs = [local_state(m, q, csi) for m in range(m_count)]
                rep = representative_bids(locs, learner.v, learner.lm, arrival, params)
                update_theta(learner, costs[-1], sched)  # diagnostic average-cost track
            update_values(learner, q, outcome, sched, rep_bids=rep)
            if cfg.learning.lm_mode == "learn" and frozen_lm is None:
                obs = FrameObservation(
                    src_full=src_full,
                    src_tx_power=p_sr_real,
                    relay_tx_power=_relay_power_vec(outcome, p_rd_real, m_count),
                )
                update_lms(learner, obs, sched, targets)
            learner.t += 1
            win_drop += src_full
            win_psrc += p_sr_real
            win_prelay += _relay_power_vec(outcome, p_rd_real, m_count)
            win_n += 1
            if cfg.run.trace:
                for node, qv in enumerate(q.as_vector()):
                    if qv > 0:
                        traces.rows.append(
                            (t, node, qv, float(learner.v.values[node, qv]))
                            + tuple(learner.lm.as_vector())
                        )
            if (t + 1) % snap_every == 0:
                traces.snapshots.append(
                    LearningSnapshot(
                        t=t + 1,
                        values=learner.v.values.copy(),
                        lm=learner.lm.as_vector(),
                        avg_drop=win_drop / win_n,
                        avg_src_power=win_psrc / win_n,
                        avg_relay_power=win_prelay / win_n,
                    )
                )
                win_drop = win_psrc = 0.0
                win_prelay = np.zeros(m_count)
                win_n = 0

        q = res.state

    lam = arrival.mean_per_frame
    counted = max(counted, 1)
    avg_occ = occ_sum / counted
    converged = True
    value_delta = lm_slack = None
    if kind == "learned" and len(traces.snapshots) >= cfg.learning.convergence_window:
        report = convergence_report(
            traces.snapshots,
            targets,
            window=cfg.learning.convergence_window,
            value_tol=cfg.learning.value_tol,
            slack_tol=cfg.learning.slack_tol,
        )
        converged = report["converged"]
        value_delta = report["value_delta"]
        lm_slack = report["lm_slack"]

    avg_cost = cost_se = None
    if costs is not None:
        tail = np.asarray(costs[burn:])
        if tail.size:
            avg_cost = float(tail.mean())
            nb = min(50, tail.size)
            batches = np.array_split(tail, nb)
            bm = np.array([b.mean() for b in batches])
            cost_se = float(bm.std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
        traces.costs = tail

    summary = RunSummary(
        policy=kind,
        axis_value=cfg.constraints.snr_db,
        seed=cfg.run.seed,
        frames=frames,
        avg_delay_frames=avg_occ / lam if lam > 0 else 0.0,
        throughput_pps=delivered_rd / (counted * cfg.phy.frame_s),
        drop_rate=drop_frames / counted,
        avg_power_src=power_src_sum / counted,
        avg_power_relay=power_relay_sum / counted,
        converged=converged,
        avg_occupancy=avg_occ,
        drop_pkt_rate=dropped_pkts / max(arrived_pkts, 1),
        relay_overflow=relay_overflow,
        avg_cost=avg_cost,
        cost_se=cost_se,
        value_delta=value_delta,
        lm_slack=lm_slack,
        lm_final=learner.lm.as_vector() if learner is not None else None,
        wallclock=time.perf_counter() - t0,
    )
    if kind == "learned":
        summary.learner = learner  # handy for freezing/inspection
    return summary, traces


def _relay_power_vec(outcome, p_rd_real, m_count):
    vec = np.zeros(m_count)
    if outcome.n_star is not None:
        vec[outcome.n_star] = p_rd_real
    return vec


AXES = ("snr", "m", "n_r", "n_b")


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Copy of cfg with one sweep axis overridden."""
    out = copy.deepcopy(cfg)
    if axis == "snr":
        out.constraints.snr_db = float(value)
    elif axis == "m":
        out.system.n_relays = int(value)
    elif axis == "n_r":
        out.system.n_r = int(value)
    elif axis == "n_b":
        out.phy.packet_bits = float(value)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; valid: {AXES}")
    return out


def cell_seed(base_seed: int, cell_index: int) -> int:
    return int(np.random.SeedSequence((base_seed, cell_index)).generate_state(1)[0])


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values,
    repetitions: int = 1,
    policies=None,
):
    """Grid of runs over axis values x policies x repetitions.

    Returns (rows, failures): one summary row per completed run, and
    (cell, error) records for cells that raised.
    """
    policies = policies or [cfg.policy.kind]
    rows, failures = [], []
    cell = 0
    for value in values:
        for policy in policies:
            for rep in range(repetitions):
                sub = apply_axis(cfg, axis, value)
                sub.policy.kind = policy
                sub.run.seed = cell_seed(cfg.run.seed, cell)
                cell += 1
                try:
                    summary, _ = run_episode(sub)
                except Exception as exc:  # sweep keeps going, cell marked failed
                    failures.append(
                        {"axis_value": value, "policy": policy, "rep": rep, "error": str(exc)}
                    )
                    continue
                row = summary.summary_row()
                row["axis"] = axis
                row["axis_value"] = value
                rows.append(row)
    return rows, failures


def compare_with_oracle(cfg: ExperimentConfig) -> dict:
    """Exact-solver comparison on the configured tiny discretized instance.

    Solves the dual-priced chain exactly, trains the auction policy online
    on the same instance at the same frozen duals, freezes it, and
    evaluates both through the exact stationary distribution.
    """
    oc = cfg.oracle
    inst = make_tiny_instance(
        seed=oc.seed,
        n_relays=cfg.system.n_relays,
        n_t=oc.n_t,
        n_r=oc.n_r,
        n_q=oc.n_q,
        states_per_link=oc.states_per_link,
        power_levels=oc.power_levels,
        packet_bits=oc.packet_bits,
        frame_symbols=oc.frame_symbols,
        arrival_values=oc.arrival_values,
        arrival_probs=oc.arrival_probs,
        csi_scale=oc.csi_scale,
        state_cap=oc.state_cap,
    )
    lm = LagrangeMultipliers(
        gamma_sd=oc.gamma[0],
        gamma_sp=oc.gamma[1],
        gamma_rp=np.full(inst.n_relays, oc.gamma[2]),
    )
    comp = CompiledInstance(inst)
    sol = relative_value_iteration(inst, lm, comp=comp)
    exact = evaluate_policy(inst, lm, sol.policy, comp=comp)

    train_cfg = copy.deepcopy(cfg)
    train_cfg.policy.kind = "learned"
    train_cfg.run.frames = oc.train_frames
    train_cfg.run.trace = False
    summary, _ = run_episode(train_cfg, instance=inst, frozen_lm=lm)
    learner = summary.learner

    policy = auction_policy_table(inst, comp, learner.v, lm, train_cfg)
    learned = evaluate_policy(inst, lm, policy, comp=comp)
    residual = bellman_residual(inst, learner.v, lm, comp=comp)
    theta = sol.theta
    gap = (learned["avg_cost"] - theta) / theta if theta > 0 else 0.0
    return {
        "theta": theta,
        "oracle_metrics": exact,
        "learned_cost": learned["avg_cost"],
        "learned_metrics": learned,
        "gap": gap,
        "max_bellman_residual": residual["max_residual"],
        "solve": sol,
        "instance": inst,
        "compiled": comp,
        "lm": lm,
        "value_table": learner.v,
        "train_summary": summary,
    }


def auction_policy_table(
    inst: DiscreteInstance,
    comp: CompiledInstance,
    v: PerNodeValueTable,
    lm: LagrangeMultipliers,
    cfg: ExperimentConfig,
) -> np.ndarray:
    """Tabulate the frozen auction policy as oracle action indices."""
    params = PolicyParams(
        packet_bits=inst.packet_bits,
        frame_symbols=inst.frame_symbols,
        p_max=max(inst.power_levels),
        power_mode="grid",
        power_grid=tuple(inst.power_levels),
    )
    arrival = _PmfArrival(inst.arrival_values, inst.arrival_probs)
    states = reachable_states(comp)
    act_index = {
        (a.m, a.n, a.n_sr, a.p_sr, a.p_rd): i for i, a in enumerate(comp.actions)
    }
    policy = np.zeros((len(states), len(inst.csi_states)), dtype=np.int64)
    for si, q_vec in enumerate(states):
        q = QueueState(q_s=q_vec[0], q_relay=tuple(q_vec[1:]))
        for h, csi in enumerate(inst.csi_states):
            out = run_auction(q, csi, v, lm, arrival, params)
            key = (
                out.m_star,
                out.n_star,
                out.n_sr if out.m_star is not None else 0,
                out.sr_power,
                out.rd_power,
            )
            if key not in act_index:
                raise RuntimeError(f"auction action {key} missing from oracle set")
            policy[si, h] = act_index[key]
    return policy
