"""Physical-layer linear algebra for small MIMO links.

Everything here operates on dense complex matrices of at most a few
antennas per side (4x4 in practice).  The SVD is a one-sided Jacobi
iteration, jitted with numba when available; at these sizes it is as
accurate as LAPACK and fast enough for per-frame use in the simulator.

Rates are spectral efficiencies in bits/s/Hz unless a ``frame_symbols``
factor (frame duration x bandwidth) converts them to bits per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap; carries the final residual."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"SVD did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual


class NullingInfeasibleError(ValueError):
    """The interference-nulling null space is trivial for this pair."""


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(sigma) @ v^H with sigma sorted descending."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.conj().T


@dataclass(frozen=True)
class WaterFillAllocation:
    """Per-stream powers at a common water level over channel eigen-gains."""

    stream_powers: np.ndarray
    water_level: float
    achieved_rate: float  # bits/s/Hz


@dataclass(frozen=True)
class LinkDesign:
    """Precoder/decorrelator pair plus the rate and power it realizes."""

    precoder: np.ndarray
    decorrelator: np.ndarray | None
    rate_bits_per_frame: float
    total_power: float
    stream_gains: np.ndarray  # eigen-gains (squared singular values) used


_JACOBI_TOL = 1e-14
_JACOBI_SWEEPS = 64


@njit(cache=True)
def _jacobi_core(a, max_sweeps, tol):  # pragma: no cover - exercised via svd()
    m, n = a.shape
    w = a.copy()
    v = np.eye(n, dtype=np.complex128)
    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0 + 0.0j
                for i in range(m):
                    wip = w[i, p]
                    wiq = w[i, q]
                    app += wip.real * wip.real + wip.imag * wip.imag
                    aqq += wiq.real * wiq.real + wiq.imag * wiq.imag
                    apq += np.conj(wip) * wiq
                mag = abs(apq)
                denom = math.sqrt(app * aqq)
                if denom == 0.0 or mag <= tol * denom:
                    continue
                if mag / denom > off:
                    off = mag / denom
                phase = apq / mag
                tau = (aqq - app) / (2.0 * mag)
                if tau != 0.0:
                    t = math.copysign(1.0, tau) / (
                        abs(tau) + math.sqrt(1.0 + tau * tau)
                    )
                else:
                    t = 1.0
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                pc = np.conj(phase)
                for i in range(m):
                    wip = w[i, p]
                    wiq = pc * w[i, q]
                    w[i, p] = c * wip - s * wiq
                    w[i, q] = s * wip + c * wiq
                for i in range(n):
                    vip = v[i, p]
                    viq = pc * v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
        if off <= tol:
            break
    sig = np.empty(n)
    for j in range(n):
        acc = 0.0
        for i in range(m):
            wij = w[i, j]
            acc += wij.real * wij.real + wij.imag * wij.imag
        sig[j] = math.sqrt(acc)
    order = np.argsort(-sig, kind="mergesort")
    sig_s = np.empty(n)
    w_s = np.empty_like(w)
    v_s = np.empty_like(v)
    for jj in range(n):
        j = order[jj]
        sig_s[jj] = sig[j]
        for i in range(m):
            w_s[i, jj] = w[i, j]
        for i in range(n):
            v_s[i, jj] = v[i, j]
    for j in range(n):
        if sig_s[j] > 1e-300:
            s_inv = 1.0 / sig_s[j]
            for i in range(m):
                w_s[i, j] = w_s[i, j] * s_inv
        else:
            for i in range(m):
                w_s[i, j] = 0.0
    return w_s, v_s, sig_s, off


def _complete_orthonormal(u: np.ndarray, col: int) -> np.ndarray:
    """Fill column `col` of u with a unit vector orthogonal to columns < col."""
    m = u.shape[0]
    for k in range(m):
        cand = np.zeros(m, dtype=np.complex128)
        cand[k] = 1.0
        for i in range(col):
            cand -= np.vdot(u[:, i], cand) * u[:, i]
        nrm = np.linalg.norm(cand)
        if nrm > 0.5:
            return cand / nrm
    raise RuntimeError("orthonormal completion failed")  # unreachable for col < m


@lru_cache(maxsize=4096)
def _svd_cached(shape: tuple, buf: bytes) -> SvdResult:
    a = np.frombuffer(buf, dtype=np.complex128).reshape(shape)
    m, n = a.shape
    flip = m < n
    if flip:
        a = a.conj().T
        m, n = n, m
    u, v, sig, off = _jacobi_core(np.ascontiguousarray(a), _JACOBI_SWEEPS, _JACOBI_TOL)
    if off > _JACOBI_TOL:
        raise SvdConvergenceError(off, _JACOBI_SWEEPS)
    if sig[-1] <= 1e-300:  # rank deficient: complete the left basis
        for j in range(n):
            if sig[j] <= 1e-300:
                u[:, j] = _complete_orthonormal(u, j)
    if flip:
        u, v = v, u
    for arr in (u, sig, v):
        arr.setflags(write=False)
    return SvdResult(u=u, sigma=sig, v=v)


def svd(a: np.ndarray) -> SvdResult:
    """Thin SVD of a complex matrix via one-sided Jacobi rotations.

    Results are cached on matrix content, so repeated decompositions of
    frozen channel realizations are free.  Returned arrays are read-only.
    """
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"svd needs a nonempty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(np.float64))):
        raise ValueError("svd input contains NaN/Inf entries")
    return _svd_cached(a.shape, a.tobytes())


def null_space(a: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (columns) of the right null space of a.

    Returns an (n, d) matrix with a @ basis = 0; d may be zero for a
    full-column-rank input.  The trailing right singular vectors of a full
    decomposition span the complement of the row space exactly.
    """
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[1] < 1:
        raise ValueError(f"null_space needs at least one column, got {a.shape}")
    n = a.shape[1]
    if a.shape[0] == 0 or not a.any():
        return np.eye(n, dtype=np.complex128)
    sigma, vh = np.linalg.svd(a, full_matrices=True)[1:]
    rank = int(np.sum(sigma > rtol * sigma[0]))
    return np.ascontiguousarray(vh[rank:].conj().T)


def water_fill(gains, total_power: float) -> WaterFillAllocation:
    """Power allocation over eigen-gains at a common water level.

    gains must be positive and sorted descending.  Active streams satisfy
    level - 1/gain = power exactly; inactive streams have level <= 1/gain.
    """
    g = [float(x) for x in gains]
    n = len(g)
    if n == 0:
        raise ValueError("water_fill needs a nonempty 1-D gain vector")
    prev = math.inf
    for x in g:
        if x <= 0:
            raise ValueError("water_fill gains must be strictly positive")
        if x > prev + 1e-12 * g[0]:
            raise ValueError("water_fill gains must be sorted descending")
        prev = x
    if total_power < 0:
        raise ValueError("total_power must be >= 0")
    inv = [1.0 / x for x in g]
    # exact active-set solve: largest k whose common level covers stream k
    level, k = inv[0], 1
    inv_sum = sum(inv)
    for cand in range(n, 0, -1):
        level_c = (total_power + inv_sum) / cand
        if level_c >= inv[cand - 1] - 1e-15:
            level, k = level_c, cand
            break
        inv_sum -= inv[cand - 1]
    powers = np.zeros(n)
    rate = 0.0
    for j in range(k):
        powers[j] = max(level - inv[j], 0.0)
        rate += math.log2(g[j] * level)
    return WaterFillAllocation(
        stream_powers=powers, water_level=level, achieved_rate=max(rate, 0.0)
    )


def _positive_gains(sigma: np.ndarray, count: int, rtol: float = 1e-12):
    """Top `count` eigen-gains, dropping numerically rank-deficient tails."""
    gains = sigma[:count] ** 2
    if gains.size and gains[0] > 0:
        gains = gains[gains > (rtol * sigma[0]) ** 2]
    else:
        gains = gains[:0]
    return gains


def sr_design_from_svd(
    sv: SvdResult, n_sr: int, power: float, frame_symbols: float
) -> LinkDesign:
    """Source precoder + relay decorrelator from a precomputed channel SVD."""
    n_r, n_t = sv.u.shape[0], sv.v.shape[0]
    if not 1 <= n_sr <= min(n_t, n_r):
        raise ValueError(
            f"n_sr={n_sr} exceeds the rank bound min(N_T, N_R)={min(n_t, n_r)}"
        )
    gains = _positive_gains(sv.sigma, n_sr)
    decorrelator = sv.u[:, :n_sr].conj().T
    precoder = np.zeros((n_t, n_sr), dtype=np.complex128)
    if gains.size and power > 0:
        wf = water_fill(gains, power)
        amp = np.sqrt(wf.stream_powers)
        precoder[:, : gains.size] = sv.v[:, : gains.size] * amp
        rate = frame_symbols * wf.achieved_rate
    else:
        rate = 0.0
    return LinkDesign(
        precoder=precoder,
        decorrelator=decorrelator,
        rate_bits_per_frame=rate,
        total_power=float(np.sum(np.abs(precoder) ** 2)),
        stream_gains=gains,
    )


def design_sr_link(
    h_sm: np.ndarray, n_sr: int, power: float, frame_symbols: float
) -> LinkDesign:
    """Mutual-information-optimal source->relay link design.

    Precoder columns are the top right singular vectors scaled by the
    water-filled per-stream amplitudes; the decorrelator projects onto the
    matching left singular vectors.
    """
    return sr_design_from_svd(svd(h_sm), n_sr, power, frame_symbols)


def rd_null_basis(g_m: np.ndarray | None, h_nm: np.ndarray) -> np.ndarray:
    """Null-space basis enforcing zero interference at the receiving relay.

    With no concurrently receiving relay (g_m is None/empty) the constraint
    is vacuous and the full space is returned.
    """
    if g_m is None or g_m.size == 0:
        return np.eye(h_nm.shape[0], dtype=np.complex128)
    basis = null_space(g_m @ h_nm)
    if basis.shape[1] == 0:
        raise NullingInfeasibleError(
            f"nulling infeasible: {g_m.shape[0]} protected streams leave no "
            f"transmit dimensions out of {h_nm.shape[0]}"
        )
    return basis


def rd_design_from_svd(
    sv_eff: SvdResult,
    basis: np.ndarray,
    n_rd: int,
    power: float,
    frame_symbols: float,
) -> LinkDesign:
    """Relay->destination precoder inside a given nulling basis."""
    if n_rd < 1:
        raise ValueError(f"n_rd must be >= 1, got {n_rd}")
    gains = _positive_gains(sv_eff.sigma, n_rd)
    n_r = basis.shape[0]
    precoder = np.zeros((n_r, n_rd), dtype=np.complex128)
    if gains.size and power > 0:
        wf = water_fill(gains, power)
        amp = np.sqrt(wf.stream_powers)
        precoder[:, : gains.size] = (basis @ sv_eff.v[:, : gains.size]) * amp
        rate = frame_symbols * wf.achieved_rate
    else:
        rate = 0.0
    return LinkDesign(
        precoder=precoder,
        decorrelator=None,
        rate_bits_per_frame=rate,
        total_power=float(np.sum(np.abs(precoder) ** 2)),
        stream_gains=gains,
    )


def design_rd_link(
    h_nd: np.ndarray,
    h_nm: np.ndarray,
    g_m: np.ndarray | None,
    n_rd: int,
    power: float,
    frame_symbols: float,
) -> LinkDesign:
    """Relay->destination link design under the interference-nulling constraint.

    The precoder lies in the null space of (decorrelator @ h_nm), so the
    concurrently receiving relay sees no interference; within that subspace
    the design water-fills h_nd like an unconstrained link.
    """
    basis = rd_null_basis(g_m, h_nm)
    return rd_design_from_svd(svd(h_nd @ basis), basis, n_rd, power, frame_symbols)


def mutual_info(h_eff: np.ndarray, f: np.ndarray) -> float:
    """log2 det(I + H F F^H H^H) in bits/s/Hz, via singular values of H @ F."""
    hf = np.asarray(h_eff, dtype=np.complex128) @ np.asarray(f, dtype=np.complex128)
    if hf.size == 0 or not hf.any():
        return 0.0
    s = svd(hf).sigma
    return float(np.sum(np.log2(1.0 + s**2)))
