"""Passing between the response matrix and TW samples.

With the dynamic equation ``i U_t + J U_x + V U = 0`` and the stationary one
``J psi' + V psi = lambda psi``, a Fourier transform in time turns the
response into the TW matrix at the reflected point, and for real potentials

    M(lambda) = int_0^inf conj(R(t)) exp(i lambda t) dt,   Im lambda > 0.

So ``i delta(t)`` maps to ``-i`` and a single edge with a Dirichlet end gives
``cot(lambda l)``.  This is the convention used throughout the package.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter
from scipy.optimize import minimize_scalar

from diractree.forward_time import ResponseMatrix, SpikeDetector
from diractree.spectral import SpectralGrid, TWSamples


class BandwidthError(ValueError):
    pass


def response_to_tw(R: ResponseMatrix, grid: SpectralGrid) -> TWSamples:
    """Transform every entry on the grid: spikes at their exact times, the
    regular part by grid-mass quadrature, plus the leading ``i`` on the
    diagonal.  Truncation at ``T`` is bounded in ``meta``."""
    lam = grid.points
    if np.any(lam.imag <= 0):
        raise ValueError("response_to_tw needs Im(lambda) > 0 at every point")
    t = R.t
    E = np.exp(1j * np.outer(lam, t))
    M = R.tau * np.einsum("ijn,kn->kji", np.conj(R.regular), E)
    for i in range(R.size):
        M[:, i, i] += np.conj(R.leading)
        for j in range(R.size):
            for ts, a in R.spikes[i][j]:
                M[:, j, i] += np.conj(a) * np.exp(1j * lam * ts)
    tail = max(1, R.steps // 10)
    level = float(np.max(np.abs(R.regular[:, :, -tail:]), initial=0.0))
    bound = level * np.exp(-grid.eps * R.horizon) / grid.eps
    meta = {"truncation_bound": bound, "convention": "M = int conj(R) exp(i lambda t) dt", "horizon": R.horizon, "tau": R.tau}
    return TWSamples(grid, M, R.labels, meta=meta)


def periodic_grid(tau: float, steps: int, eps: float = 1.0) -> SpectralGrid:
    """One full period ``[-pi/tau, pi/tau)`` of ``steps + 1`` points on ``Im = eps``.

    On this grid the transform of grid masses is a damped DFT and
    ``tw_to_response`` inverts it exactly.
    """
    n = steps + 1
    dw = 2 * np.pi / (n * tau)
    k = np.arange(n) - n // 2
    return SpectralGrid(k * dw + 1j * eps)


def raised_cosine(omega: np.ndarray, K: float, rolloff: float = 0.1) -> np.ndarray:
    a = np.abs(omega)
    edge = (1 - rolloff) * K
    w = np.ones_like(a)
    band = (a > edge) & (a <= K)
    w[band] = 0.5 * (1 + np.cos(np.pi * (a[band] - edge) / (rolloff * K)))
    w[a > K] = 0.0
    return w


def _line(tw: TWSamples):
    lam = tw.grid.points
    eps = float(lam.imag[0])
    if not np.allclose(lam.imag, eps):
        raise ValueError("samples must lie on one line Im lambda = eps")
    if eps <= 0:
        raise ValueError("eps must be positive")
    order = np.argsort(lam.real)
    omega = lam.real[order]
    d = np.diff(omega)
    if omega.size < 2 or not np.allclose(d, d[0], rtol=1e-6):
        raise ValueError("the k-grid must be uniform")
    return omega, float(d[0]), eps, tw.M[order]


def tw_to_response(
    tw: TWSamples,
    horizon: float,
    tau: float | None = None,
    rolloff: float = 0.1,
    detector: SpikeDetector | None = None,
    max_spikes: int = 500,
    threshold: float = 1e-2,
) -> ResponseMatrix:
    """Damped inverse transform along the line ``Im lambda = eps``.

    On a full-period grid (see ``periodic_grid``) the grid masses are
    recovered exactly and split into spikes and regular part as for simulated
    data.  Otherwise the band ``[-K, K]`` is tapered with a raised cosine and
    spikes are found one at a time by matching the window's point-spread
    function, then subtracted; the remainder is the regular kernel.  Spikes of
    amplitude below ``threshold`` are left in the regular part.
    """
    omega, dw, eps, M = _line(tw)
    K = float(max(-omega[0], omega[-1]))
    if tau is None:
        tau = np.pi / K
    steps = int(round(horizon / tau))
    t = tau * np.arange(steps + 1)
    full = abs(omega.size * dw * tau - 2 * np.pi) < 1e-6
    if full and omega.size < steps + 1:
        raise ValueError("k spacing too coarse for the requested horizon")
    window = np.ones_like(omega) if full else raised_cosine(omega, K, rolloff)
    E = np.exp(-1j * np.outer(t, omega)) * (window * (tau * dw / (2 * np.pi)))[None, :]
    g = np.einsum("nk,kji->ijn", E, M) * np.exp(eps * t)[None, None, :]
    h = np.conj(g)
    meta = {"from_tw": True, "K": K, "eps": eps, "full_period": bool(full)}
    if full:
        return ResponseMatrix.from_impulse(h, tau, tw.labels, detector, meta)

    coef = (tau * dw / (2 * np.pi)) * window

    def shape(t0: float, lo: int = 0, hi: int = steps + 1) -> np.ndarray:
        # conjugated, re-damped point-spread function of a spike at t0
        d = t[lo:hi] - t0
        return np.conj(np.exp(-1j * np.outer(d, omega)) @ coef) * np.exp(eps * d)

    peak = abs(coef.sum())
    width = 2 * np.pi / K
    half = max(3, int(np.ceil(0.5 * width / tau)))
    bg_window = 8 * half + 1
    m = tw.size
    spikes = [[[] for _ in range(m)] for _ in range(m)]
    regular = np.zeros_like(h)
    unresolved = []
    leads = []
    for i in range(m):
        for j in range(m):
            seq = h[i, j].copy()
            found: list[tuple[float, complex]] = []
            for _ in range(max_spikes):
                # smooth background: running median over several spike widths
                mag = np.abs(seq)
                bg = median_filter(mag, size=bg_window, mode="mirror")
                score = (mag - bg) * np.exp(-eps * t)
                k = int(np.argmax(score))
                if score[k] / peak < threshold:
                    break
                lo, hi = max(0, k - half), min(steps + 1, k + half + 1)

                def misfit(t0, lo=lo, hi=hi, seq=seq):
                    sh = shape(t0, lo, hi)
                    amp = np.vdot(sh, seq[lo:hi]) / np.vdot(sh, sh).real
                    return float(np.linalg.norm(seq[lo:hi] - amp * sh)), amp

                fit = minimize_scalar(
                    lambda x: misfit(x)[0],
                    bounds=(max(0.0, t[k] - tau), t[k] + tau),
                    method="bounded",
                    options={"xatol": 1e-6 * tau},
                )
                t0 = 0.0 if k == 0 else float(fit.x)
                amp = misfit(t0)[1]
                seq -= amp * shape(t0)
                found.append((float(t0), complex(amp)))
            found.sort(key=lambda x: x[0])
            merged: list[list] = []
            for t0, amp in found:
                if merged and abs(t0 - merged[-1][0]) < 0.5 * tau:
                    merged[-1][1] += amp
                else:
                    merged.append([t0, amp])
            for (t1, _), (t2, _) in zip(merged, merged[1:]):
                if t2 - t1 < width - 1e-9:
                    unresolved.append((tw.labels[i], tw.labels[j], round(t1, 9), round(t2, 9)))
            if i == j:
                lead = [x for x in merged if x[0] < 0.5 * tau]
                leads.append(complex(sum(x[1] for x in lead)))
                merged = [x for x in merged if x[0] >= 0.5 * tau]
            spikes[i][j] = [(t0, complex(amp)) for t0, amp in merged]
            regular[i, j] = seq / tau
    if unresolved:
        raise BandwidthError(f"spikes closer than 2 pi / K = {width:.3g} cannot be separated: {unresolved[:5]}")
    meta["leading_measured"] = [[z.real, z.imag] for z in leads]
    # band-limited leakage ahead of arrivals stays below this
    meta["noise_floor"] = threshold * peak
    return ResponseMatrix(tau, tw.labels, spikes, regular, 1j, meta)
