"""Reference policies: backpressure and CSIT-only under both duplex modes."""

import numpy as np
import pytest

from relaysim.auction import PolicyParams
from relaysim.baselines import (
    BASELINES,
    BaselineConfig,
    backpressure_decide,
    baseline_decide,
    csit_only_decide,
)
from relaysim.traffic import GlobalCsi, QueueState, sample_csi

PARAMS = PolicyParams(packet_bits=1.0, frame_symbols=1.0, p_max=100.0)


def csi(seed=0, m=2, n_t=2, n_r=4):
    return sample_csi(np.random.default_rng(seed), m, n_t, n_r)


class TestConfig:
    def test_five_named_combinations(self):
        assert BASELINES["baseline1"] == BaselineConfig("backpressure", "full", "bdf")
        assert BASELINES["baseline2"] == BaselineConfig("csit_only", "full", "df")
        assert BASELINES["baseline3"] == BaselineConfig("csit_only", "half", "bdf")
        assert BASELINES["baseline4"] == BaselineConfig("backpressure", "half", "bdf")
        assert BASELINES["baseline5"] == BaselineConfig("csit_only", "half", "df")

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            BaselineConfig("weird", "half", "bdf")
        with pytest.raises(ValueError):
            BaselineConfig("backpressure", "half", "df")


class TestBackpressure:
    def test_empty_queues_idle(self):
        q = QueueState(q_s=0, q_relay=(0, 0))
        out = backpressure_decide(q, csi(), BASELINES["baseline4"], 10.0, 10.0, PARAMS)
        assert out.m_star is None and out.n_star is None

    def test_strong_channel_selected(self):
        # relay 1 has a much stronger uplink; source heavily backlogged
        h_sr = (0.05 * np.eye(4, 2).astype(complex), 3.0 * np.eye(4, 2).astype(complex))
        weak = 1e-4 * np.eye(2, 4).astype(complex)
        g = GlobalCsi(
            h_sr=h_sr, h_rd=(weak, weak),
            h_rr={(0, 1): np.eye(4, dtype=complex), (1, 0): np.eye(4, dtype=complex)},
        )
        q = QueueState(q_s=10, q_relay=(0, 0))
        out = backpressure_decide(q, g, BASELINES["baseline4"], 10.0, 10.0, PARAMS)
        assert out.m_star == 1

    def test_half_duplex_never_self_paired(self):
        for seed in range(20):
            q = QueueState(q_s=8, q_relay=(5, 3))
            out = backpressure_decide(q, csi(seed), BASELINES["baseline4"], 10.0, 10.0, PARAMS)
            if out.m_star is not None and out.n_star is not None:
                assert out.m_star != out.n_star

    def test_full_duplex_rate_dominates_half(self):
        for seed in range(20):
            q = QueueState(q_s=9, q_relay=(4, 6))
            full = backpressure_decide(q, csi(seed), BASELINES["baseline1"], 10.0, 10.0, PARAMS)
            half = backpressure_decide(q, csi(seed), BASELINES["baseline4"], 10.0, 10.0, PARAMS)
            assert full.sr_rate_bits + full.rd_rate_bits >= half.sr_rate_bits + half.rd_rate_bits - 1e-9

    def test_pure_function(self):
        q = QueueState(q_s=4, q_relay=(1, 2))
        a = backpressure_decide(q, csi(3), BASELINES["baseline4"], 10.0, 10.0, PARAMS)
        b = backpressure_decide(q, csi(3), BASELINES["baseline4"], 10.0, 10.0, PARAMS)
        assert a == b


class TestCsitOnly:
    def test_decision_ignores_queues(self):
        g = csi(4)
        q1 = QueueState(q_s=9, q_relay=(2, 7))
        q2 = QueueState(q_s=1, q_relay=(5, 0))
        for name in ("baseline2", "baseline3", "baseline5"):
            a = csit_only_decide(g, q1, BASELINES[name], 10.0, 10.0, PARAMS)
            b = csit_only_decide(g, q2, BASELINES[name], 10.0, 10.0, PARAMS)
            assert a == b

    def test_df_selects_single_relay_both_roles(self):
        out = csit_only_decide(csi(5), QueueState(5, (3, 3)), BASELINES["baseline5"], 10.0, 10.0, PARAMS)
        assert out.m_star == out.n_star

    def test_df_half_duplex_rate_is_half_min_hop(self):
        # scalar channels make the bottleneck arithmetic exact
        g = GlobalCsi(
            h_sr=(np.array([[2.0 + 0j]]),),
            h_rd=(np.array([[1.0 + 0j]]),),
            h_rr={},
        )
        q = QueueState(q_s=5, q_relay=(5,))
        params = PolicyParams(packet_bits=1.0, frame_symbols=1.0, p_max=10.0)
        half = csit_only_decide(g, q, BaselineConfig("csit_only", "half", "df"), 3.0, 3.0, params)
        full = csit_only_decide(g, q, BaselineConfig("csit_only", "full", "df"), 3.0, 3.0, params)
        r1 = np.log2(1 + 3.0 * 4.0)
        r2 = np.log2(1 + 3.0 * 1.0)
        assert full.rd_rate_bits == pytest.approx(min(r1, r2))
        assert half.rd_rate_bits == pytest.approx(0.5 * min(r1, r2))

    def test_bdf_maximizes_rate_sum(self):
        g = csi(6)
        out = csit_only_decide(g, QueueState(5, (5, 5)), BASELINES["baseline3"], 10.0, 10.0, PARAMS)
        # with plenty of backlog some pair should always be worth activating
        assert out.sr_rate_bits + out.rd_rate_bits > 0

    def test_dispatch(self):
        q = QueueState(q_s=4, q_relay=(1, 2))
        for name, cfg in BASELINES.items():
            out = baseline_decide(q, csi(7), cfg, 10.0, 10.0, PARAMS)
            assert out.winning_bid == 0.0
