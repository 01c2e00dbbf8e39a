"""Link-design layer: SVD, null spaces, water-filling, precoders, rates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaysim.phy import (
    NullingInfeasibleError,
    design_rd_link,
    design_sr_link,
    mutual_info,
    null_space,
    svd,
    water_fill,
)

RNG = np.random.default_rng(20240811)


def crandn(rows, cols, rng=RNG):
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)


def svd_invariants(a, res, tol=1e-10):
    k = min(a.shape)
    assert res.u.shape == (a.shape[0], k)
    assert res.v.shape == (a.shape[1], k)
    assert np.linalg.norm(res.u.conj().T @ res.u - np.eye(k)) <= 1e-10
    assert np.linalg.norm(res.v.conj().T @ res.v - np.eye(k)) <= 1e-10
    assert np.all(np.diff(res.sigma) <= 1e-12)
    assert np.all(res.sigma >= 0)
    scale = max(1.0, np.linalg.norm(a))
    assert np.linalg.norm(a - res.reconstruct()) <= tol * scale


class TestSvd:
    def test_identity(self):
        res = svd(np.eye(2, dtype=complex))
        assert np.allclose(res.sigma, [1.0, 1.0])
        svd_invariants(np.eye(2, dtype=complex), res)

    def test_diagonal(self):
        res = svd(np.diag([3.0, 1.0]).astype(complex))
        assert np.allclose(res.sigma, [3.0, 1.0])

    def test_random_reconstruction(self):
        a = crandn(4, 2)
        svd_invariants(a, svd(a))

    def test_matches_lapack_singular_values(self):
        for _ in range(200):
            rows, cols = RNG.integers(1, 5, size=2)
            a = crandn(rows, cols)
            assert np.allclose(svd(a).sigma, np.linalg.svd(a, compute_uv=False), atol=1e-11)

    def test_all_small_shapes_fuzz(self):
        for rows in range(1, 5):
            for cols in range(1, 5):
                for _ in range(30):
                    a = crandn(rows, cols)
                    svd_invariants(a, svd(a))

    def test_rank_deficient(self):
        a = np.zeros((3, 3), dtype=complex)
        a[0, 0] = 2.0
        res = svd(a)
        assert np.allclose(res.sigma, [2.0, 0.0, 0.0])
        svd_invariants(a, res)

    def test_zero_matrix(self):
        svd_invariants(np.zeros((2, 3), dtype=complex), svd(np.zeros((2, 3), dtype=complex)))

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            svd(np.zeros((0, 2), dtype=complex))
        with pytest.raises(ValueError):
            svd(np.array([[np.nan + 0j]]))


class TestNullSpace:
    def test_zero_row_matrix(self):
        basis = null_space(np.zeros((1, 3), dtype=complex))
        assert basis.shape == (3, 3)
        assert np.linalg.norm(basis.conj().T @ basis - np.eye(3)) <= 1e-10

    def test_full_rank_identity(self):
        assert null_space(np.eye(2, dtype=complex)).shape == (2, 0)

    def test_row_vector(self):
        a = np.array([[1.0, 1.0]], dtype=complex) / np.sqrt(2)
        basis = null_space(a)
        assert basis.shape == (2, 1)
        assert np.linalg.norm(a @ basis) <= 1e-10

    def test_random_property(self):
        for _ in range(300):
            rows = int(RNG.integers(1, 4))
            cols = int(RNG.integers(rows, 5))
            a = crandn(rows, cols)
            basis = null_space(a)
            assert basis.shape == (cols, cols - min(rows, cols))
            if basis.shape[1]:
                assert np.linalg.norm(a @ basis) <= 1e-10 * max(1, np.linalg.norm(a))
                gram = basis.conj().T @ basis
                assert np.linalg.norm(gram - np.eye(basis.shape[1])) <= 1e-10


class TestWaterFill:
    def test_single_stream(self):
        wf = water_fill([1.0], 5.0)
        assert wf.stream_powers == pytest.approx([5.0])
        assert wf.water_level == pytest.approx(6.0)

    def test_two_streams_split(self):
        # independent bisection on 2*mu - 1/4 - 1 = 1 gives mu = 1.125
        wf = water_fill([4.0, 1.0], 1.0)
        assert wf.stream_powers == pytest.approx([0.875, 0.125])
        assert wf.water_level == pytest.approx(1.125)

    def test_weak_stream_inactive(self):
        # mu = 0.75 < 1/0.1, so stream 2 stays dry
        wf = water_fill([4.0, 0.1], 0.5)
        assert wf.stream_powers == pytest.approx([0.5, 0.0])
        assert wf.water_level == pytest.approx(0.75)

    def test_zero_power(self):
        wf = water_fill([2.0, 1.0], 0.0)
        assert wf.achieved_rate == 0.0
        assert np.all(wf.stream_powers == 0)
        assert wf.water_level > 0

    def _kkt(self, gains, total):
        wf = water_fill(gains, total)
        gains = np.asarray(gains, dtype=float)
        assert abs(wf.stream_powers.sum() - total) <= 1e-9 * max(1.0, total)
        assert np.all(wf.stream_powers >= 0)
        for g, p in zip(gains, wf.stream_powers):
            if p > 0:
                assert abs(wf.water_level - 1.0 / g - p) <= 1e-9
            else:
                assert wf.water_level <= 1.0 / g + 1e-9
        return wf

    def test_kkt_fuzz(self):
        for _ in range(1000):
            n = int(RNG.integers(1, 5))
            gains = np.sort(RNG.uniform(0.05, 10.0, size=n))[::-1]
            self._kkt(gains, float(RNG.uniform(0, 20)))

    @given(
        st.lists(st.floats(0.05, 50.0), min_size=1, max_size=4),
        st.floats(0.0, 100.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_kkt_hypothesis(self, gains, total):
        self._kkt(np.sort(np.asarray(gains))[::-1], total)

    def test_rate_monotone_in_power(self):
        gains = np.array([5.0, 2.0, 0.5])
        rates = [water_fill(gains, p).achieved_rate for p in np.linspace(0, 30, 40)]
        assert np.all(np.diff(rates) >= -1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            water_fill([1.0, 2.0], 1.0)  # ascending
        with pytest.raises(ValueError):
            water_fill([1.0, -0.5], 1.0)
        with pytest.raises(ValueError):
            water_fill([1.0], -1.0)


class TestSrDesign:
    def test_single_stream_beamforming(self):
        h = np.diag([2.0, 1.0]).astype(complex)
        d = design_sr_link(h, n_sr=1, power=1.0, frame_symbols=7.0)
        assert d.rate_bits_per_frame == pytest.approx(7.0 * np.log2(1 + 4.0))
        assert d.total_power == pytest.approx(1.0)

    def test_zero_power(self):
        d = design_sr_link(crandn(4, 2), n_sr=2, power=0.0, frame_symbols=1.0)
        assert d.rate_bits_per_frame == 0.0
        assert d.total_power == 0.0

    def test_power_conservation_and_diagonalization(self):
        for _ in range(200):
            h = crandn(4, 2)
            d = design_sr_link(h, n_sr=2, power=3.0, frame_symbols=1.0)
            assert d.total_power == pytest.approx(3.0, abs=1e-9)
            eff = d.decorrelator @ h @ d.precoder
            off = eff - np.diag(np.diag(eff))
            assert np.linalg.norm(off) <= 1e-9 * max(1, np.linalg.norm(eff))

    def test_rate_matches_mutual_info(self):
        h = crandn(4, 2)
        d = design_sr_link(h, n_sr=2, power=2.0, frame_symbols=1.0)
        eff = d.decorrelator @ h
        assert d.rate_bits_per_frame == pytest.approx(mutual_info(eff, d.precoder), rel=1e-9)

    def test_stream_count_bound(self):
        with pytest.raises(ValueError, match="rank"):
            design_sr_link(crandn(4, 2), n_sr=3, power=1.0, frame_symbols=1.0)


class TestRdDesign:
    def test_unconstrained_when_no_rx(self):
        h_nd = crandn(2, 4)
        d = design_rd_link(h_nd, crandn(4, 4), None, n_rd=2, power=2.0, frame_symbols=1.0)
        ref = design_sr_link(h_nd.conj().T, n_sr=2, power=2.0, frame_symbols=1.0)
        assert d.rate_bits_per_frame == pytest.approx(ref.rate_bits_per_frame, rel=1e-9)
        assert d.total_power == pytest.approx(2.0, abs=1e-9)

    def test_nulling_residual(self):
        for _ in range(200):
            h_sm = crandn(4, 2)
            g_m = svd(h_sm).u[:, :2].conj().T
            h_nm = crandn(4, 4)
            h_nd = crandn(2, 4)
            d = design_rd_link(h_nd, h_nm, g_m, n_rd=2, power=1.5, frame_symbols=1.0)
            assert np.linalg.norm(g_m @ h_nm @ d.precoder) <= 1e-9
            assert d.total_power == pytest.approx(1.5, abs=1e-9)

    def test_zero_power(self):
        g_m = svd(crandn(4, 2)).u[:, :1].conj().T
        d = design_rd_link(crandn(2, 4), crandn(4, 4), g_m, 2, 0.0, 1.0)
        assert d.rate_bits_per_frame == 0.0

    def test_infeasible_nulling(self):
        # protected streams fill the whole transmit space
        g_m = np.eye(2, dtype=complex)
        h_nm = np.eye(2, dtype=complex)
        with pytest.raises(NullingInfeasibleError):
            design_rd_link(crandn(2, 2), h_nm, g_m, 1, 1.0, 1.0)


class TestMutualInfo:
    def test_zero_precoder(self):
        assert mutual_info(crandn(2, 2), np.zeros((2, 2), dtype=complex)) == 0.0

    def test_scalar(self):
        assert mutual_info(np.eye(1, dtype=complex), np.array([[np.sqrt(3)]], dtype=complex)) == pytest.approx(2.0)

    def test_matches_eigenvalue_oracle(self):
        for _ in range(100):
            h = crandn(2, 2)
            f = crandn(2, 2)
            hf = h @ f
            mu = np.linalg.eigvalsh(hf @ hf.conj().T)
            expect = float(np.sum(np.log2(1 + np.maximum(mu, 0.0))))
            assert mutual_info(h, f) == pytest.approx(expect, rel=1e-9, abs=1e-9)

    def test_invariant_under_unitary_rotation(self):
        h = crandn(2, 3)
        f = crandn(3, 2)
        q = np.linalg.qr(crandn(2, 2))[0]
        assert mutual_info(h, f) == pytest.approx(mutual_info(h, f @ q), abs=1e-9)
