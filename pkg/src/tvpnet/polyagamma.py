"""Exact sampling from the Polya-gamma PG(1, z) distribution.

Draws use the alternating-series accept/reject scheme for ``J*(1, z/2)``
with an inverse-Gaussian proposal left of the truncation point 0.64 and a
truncated exponential to its right; ``PG(1, z) = J*(1, z/2) / 4``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, log_ndtr

TRUNC = 0.64
Z_CLAMP = 500.0
MAX_ROUNDS = 10_000

_HALF_PI = 0.5 * math.pi
_PI2_8 = math.pi**2 / 8.0


def pg_mean(z):
    """``E[PG(1, z)] = tanh(z/2) / (2z)``, with value 1/4 at ``z = 0``."""
    z = np.abs(np.asarray(z, dtype=float))
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    out = np.where(small, 0.25 * (1.0 - z * z / 12.0 + z**4 / 120.0), np.tanh(zs / 2.0) / (2.0 * zs))
    return out if out.ndim else float(out)


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """n-th term of the piecewise alternating series for the J*(1) density."""
    k = (n + 0.5) * math.pi
    out = np.empty_like(x)
    right = x > TRUNC
    xr = x[right]
    out[right] = k * np.exp(-0.5 * k * k * xr)
    xl = x[~right]
    out[~right] = np.exp(
        -1.5 * (math.log(_HALF_PI) + np.log(xl)) + math.log(k) - 2.0 * (n + 0.5) ** 2 / xl
    )
    return out


def _exp_mass(c: np.ndarray) -> np.ndarray:
    """Probability of proposing from the exponential (right) piece."""
    fz = _PI2_8 + 0.5 * c * c
    rt = math.sqrt(1.0 / TRUNC)
    b = rt * (TRUNC * c - 1.0)
    a = -rt * (TRUNC * c + 1.0)
    x0 = np.log(fz) + fz * TRUNC
    xb = x0 - c + log_ndtr(b)
    xa = x0 + c + log_ndtr(a)
    log_q_over_p = math.log(4.0 / math.pi) + np.logaddexp(xb, xa)
    return expit(-log_q_over_p)


def _truncated_inverse_gaussian(c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """IG(mean=1/c, shape=1) restricted to (0, TRUNC)."""
    out = np.empty_like(c)
    big_mean = c < 1.0 / TRUNC

    # mean above the truncation point: chi-square-type proposal plus rejection
    idx = np.flatnonzero(big_mean)
    rounds = 0
    while idx.size:
        rounds += 1
        if rounds > MAX_ROUNDS:
            raise RuntimeError("truncated inverse-Gaussian sampler did not terminate")
        e1 = rng.standard_exponential(idx.size)
        e2 = rng.standard_exponential(idx.size)
        bad = e1 * e1 > 2.0 * e2 / TRUNC
        while bad.any():
            e1[bad] = rng.standard_exponential(bad.sum())
            e2[bad] = rng.standard_exponential(bad.sum())
            bad = e1 * e1 > 2.0 * e2 / TRUNC
        x = 1.0 + e1 * TRUNC
        x = TRUNC / (x * x)
        cc = c[idx]
        keep = rng.random(idx.size) <= np.exp(-0.5 * cc * cc * x)
        out[idx[keep]] = x[keep]
        idx = idx[~keep]

    # mean below the truncation point: draw IG directly until inside (0, TRUNC)
    idx = np.flatnonzero(~big_mean)
    rounds = 0
    while idx.size:
        rounds += 1
        if rounds > MAX_ROUNDS:
            raise RuntimeError("truncated inverse-Gaussian sampler did not terminate")
        mu = 1.0 / c[idx]
        y = rng.standard_normal(idx.size)
        y = y * y
        half_mu = 0.5 * mu
        mu_y = mu * y
        x = mu + half_mu * mu_y - half_mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        flip = rng.random(idx.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        keep = x < TRUNC
        out[idx[keep]] = x[keep]
        idx = idx[~keep]
    return out


def pg_draw(z, rng=None):
    """Exact draw(s) from PG(1, z); returns a float for scalar ``z``.

    ``|z|`` above 500 is clamped to 500. Raises ``RuntimeError`` if the
    accept/reject loop exceeds 10^4 rounds, which indicates a bug.
    """
    rng = np.random.default_rng(rng)
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("PG tilt must be finite")
    c = 0.5 * np.minimum(np.abs(z_arr).ravel(), Z_CLAMP)
    fz = _PI2_8 + 0.5 * c * c
    p_exp = _exp_mass(c)
    out = np.empty_like(c)

    pending = np.arange(c.size)
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > MAX_ROUNDS:
            raise RuntimeError("Polya-gamma sampler exceeded its iteration cap")
        cp = c[pending]
        m = pending.size
        use_exp = rng.random(m) < p_exp[pending]
        x = np.empty(m)
        x[use_exp] = TRUNC + rng.standard_exponential(int(use_exp.sum())) / fz[pending][use_exp]
        x[~use_exp] = _truncated_inverse_gaussian(cp[~use_exp], rng)

        s = _series_coef(0, x)
        y = rng.random(m) * s
        accepted = np.zeros(m, dtype=bool)
        active = np.ones(m, dtype=bool)
        n = 0
        while active.any():
            n += 1
            ia = np.flatnonzero(active)
            if n % 2 == 1:
                s[ia] -= _series_coef(n, x[ia])
                hit = y[ia] <= s[ia]
                accepted[ia[hit]] = True
                active[ia[hit]] = False
            else:
                s[ia] += _series_coef(n, x[ia])
                active[ia[y[ia] > s[ia]]] = False
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]

    out = out.reshape(z_arr.shape)
    return out if out.ndim else float(out)
