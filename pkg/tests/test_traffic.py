"""Channel statistics, arrival models, and the queue-update law."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaysim.traffic import (
    ArrivalModel,
    QueueState,
    ServiceDecision,
    sample_arrivals,
    sample_csi,
    step_queues,
)


class TestSampleCsi:
    def test_shapes_match_dims(self):
        csi = sample_csi(np.random.default_rng(0), m=2, n_t=2, n_r=4)
        assert all(h.shape == (4, 2) for h in csi.h_sr)
        assert all(h.shape == (2, 4) for h in csi.h_rd)
        assert set(csi.h_rr) == {(0, 1), (1, 0)}
        assert csi.h_rr[(0, 1)].shape == (4, 4)

    def test_unit_variance(self):
        rng = np.random.default_rng(1)
        draws = [sample_csi(rng, 1, 2, 2).h_sr[0] for _ in range(25_000)]
        power = np.mean([np.mean(np.abs(h) ** 2) for h in draws])
        assert power == pytest.approx(1.0, abs=0.02)

    def test_deterministic_given_seed(self):
        a = sample_csi(np.random.default_rng(7), 2, 2, 4)
        b = sample_csi(np.random.default_rng(7), 2, 2, 4)
        assert all(np.array_equal(x, y) for x, y in zip(a.h_sr, b.h_sr))
        assert all(np.array_equal(a.h_rr[k], b.h_rr[k]) for k in a.h_rr)

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            sample_csi(np.random.default_rng(0), 0, 2, 2)


class TestArrivals:
    def test_deterministic(self):
        model = ArrivalModel(kind="deterministic", mean_per_frame=1.0)
        rng = np.random.default_rng(0)
        assert all(sample_arrivals(rng, model) == 1 for _ in range(100))

    def test_poisson_mean(self):
        model = ArrivalModel(kind="poisson", mean_per_frame=1.0)
        rng = np.random.default_rng(2)
        xs = [sample_arrivals(rng, model) for _ in range(100_000)]
        assert np.mean(xs) == pytest.approx(1.0, abs=0.02)

    def test_rate_conversion_paper_values(self):
        # 200 packets/s at 5 ms frames is one packet per frame
        assert 200.0 * 5e-3 == pytest.approx(1.0)

    def test_bernoulli(self):
        model = ArrivalModel(kind="bernoulli", mean_per_frame=0.3)
        rng = np.random.default_rng(3)
        xs = [sample_arrivals(rng, model) for _ in range(50_000)]
        assert set(xs) <= {0, 1}
        assert np.mean(xs) == pytest.approx(0.3, abs=0.01)

    def test_pmf_truncation(self):
        vals, probs = ArrivalModel(kind="poisson", mean_per_frame=1.0).pmf()
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert vals[0] == 0
        mean = float(vals @ probs)
        assert mean == pytest.approx(1.0, abs=1e-5)

    def test_validation(self):
        with pytest.raises(ValueError):
            ArrivalModel(kind="weird", mean_per_frame=1.0)
        with pytest.raises(ValueError):
            ArrivalModel(kind="bernoulli", mean_per_frame=1.5)
        with pytest.raises(ValueError):
            ArrivalModel(kind="deterministic", mean_per_frame=0.5)


class TestStepQueues:
    def test_serve_then_arrive(self):
        q = QueueState(q_s=5, q_relay=(0, 0))
        d = ServiceDecision(rx_rs=0, tx_rs=None, sr_packets=2, rd_packets=0)
        res = step_queues(q, d, x=1, n_q=10)
        assert res.state.q_s == 4
        assert res.state.q_relay == (2, 0)
        assert res.dropped == 0

    def test_source_overflow(self):
        q = QueueState(q_s=10, q_relay=(0,))
        d = ServiceDecision(rx_rs=None, tx_rs=None, sr_packets=0, rd_packets=0)
        res = step_queues(q, d, x=3, n_q=10)
        assert res.state.q_s == 10
        assert res.dropped == 3
        assert res.src_buffer_full

    def test_tx_clamp(self):
        q = QueueState(q_s=0, q_relay=(0, 1))
        d = ServiceDecision(rx_rs=None, tx_rs=1, sr_packets=0, rd_packets=4)
        res = step_queues(q, d, x=0, n_q=10)
        assert res.state.q_relay == (0, 0)
        assert res.rd_delivered == 1

    def test_sr_limited_by_source_content(self):
        q = QueueState(q_s=1, q_relay=(0,))
        d = ServiceDecision(rx_rs=0, tx_rs=None, sr_packets=5, rd_packets=0)
        res = step_queues(q, d, x=0, n_q=10)
        assert res.sr_delivered == 1
        assert res.state.q_relay == (1,)

    def test_relay_overflow_counted(self):
        q = QueueState(q_s=5, q_relay=(9,))
        d = ServiceDecision(rx_rs=0, tx_rs=None, sr_packets=3, rd_packets=0)
        res = step_queues(q, d, x=0, n_q=10)
        assert res.state.q_relay == (10,)
        assert res.relay_dropped == 2

    def test_same_relay_tx_then_rx(self):
        # full-duplex / time-shared: drain first, then receive
        q = QueueState(q_s=4, q_relay=(8,))
        d = ServiceDecision(rx_rs=0, tx_rs=0, sr_packets=3, rd_packets=5)
        res = step_queues(q, d, x=0, n_q=10)
        assert res.rd_delivered == 5
        assert res.state.q_relay == (6,)
        assert res.state.q_s == 1

    @staticmethod
    def _random_step(rng, n_q=10, m=3):
        q = QueueState(
            q_s=int(rng.integers(0, n_q + 1)),
            q_relay=tuple(int(v) for v in rng.integers(0, n_q + 1, size=m)),
        )
        rx = rng.integers(-1, m)
        tx = rng.integers(-1, m)
        d = ServiceDecision(
            rx_rs=None if rx < 0 else int(rx),
            tx_rs=None if tx < 0 else int(tx),
            sr_packets=int(rng.integers(0, 2 * n_q)),
            rd_packets=int(rng.integers(0, 2 * n_q)),
        )
        x = int(rng.integers(0, 6))
        return q, d, x

    def check_conservation(self, q, d, x, n_q=10):
        res = step_queues(q, d, x, n_q)
        state = res.state
        assert 0 <= state.q_s <= n_q
        assert all(0 <= v <= n_q for v in state.q_relay)
        # source: arrivals = growth + shipped + dropped
        assert x == (state.q_s - q.q_s) + res.sr_delivered + res.dropped
        # relays: shipped in - delivered out - overflow = growth
        relay_delta = sum(state.q_relay) - sum(q.q_relay)
        assert res.sr_delivered - res.rd_delivered - res.relay_dropped == relay_delta

    def test_conservation_fuzz(self):
        rng = np.random.default_rng(11)
        for _ in range(20_000):
            q, d, x = self._random_step(rng)
            self.check_conservation(q, d, x)

    @given(st.integers(0, 10), st.integers(0, 10), st.integers(0, 10),
           st.integers(0, 20), st.integers(0, 20), st.integers(0, 5))
    @settings(max_examples=300, deadline=None)
    def test_conservation_hypothesis(self, q_s, q_r0, q_r1, sr, rd, x):
        q = QueueState(q_s=q_s, q_relay=(q_r0, q_r1))
        d = ServiceDecision(rx_rs=0, tx_rs=1, sr_packets=sr, rd_packets=rd)
        self.check_conservation(q, d, x)

    def test_rejects_negative(self):
        q = QueueState(q_s=0, q_relay=(0,))
        d = ServiceDecision(rx_rs=None, tx_rs=None, sr_packets=0, rd_packets=0)
        with pytest.raises(ValueError):
            step_queues(q, d, x=-1, n_q=10)
