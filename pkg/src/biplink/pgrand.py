"""Random-variate kernels: Polya-Gamma PG(1, z), truncated normal on (0, 1),
and seeded generator streams.

The PG sampler is the exact alternating-series rejection method of Devroye as
adapted by Polson, Scott & Windle (2013), vectorised over numpy arrays so a
whole block of auxiliaries is drawn in a handful of array passes.
"""

import numpy as np
from scipy import special

__all__ = ["rng_stream", "sample_pg", "sample_pg_counts", "sample_truncnorm01"]

_TRUNC = 0.64
_TRUNC_RECIP = 1.0 / _TRUNC
_PI2_8 = np.pi ** 2 / 8.0


def rng_stream(seed, stream_id=0):
    """Return a generator for the block ``stream_id`` of ``seed``.

    Identical ``(seed, stream_id)`` pairs reproduce the same sequence, and
    distinct stream ids are spawned children of one ``SeedSequence`` so they
    are statistically independent.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def _series_coef(n, x):
    # n-th term a_n(x) of the alternating series for the J*(1) density
    k = (n + 0.5) * np.pi
    out = np.empty_like(x)
    big = x > _TRUNC
    out[big] = k * np.exp(-0.5 * k * k * x[big])
    small = ~big
    xs = x[small]
    with np.errstate(divide="ignore", invalid="ignore"):
        expnt = (-1.5 * (np.log(0.5 * np.pi) + np.log(xs)) + np.log(k)
                 - 2.0 * (n + 0.5) ** 2 / xs)
    out[small] = np.where(xs > 0, np.exp(expnt), 0.0)
    return out


def _mass_texpon(z):
    # probability of drawing from the truncated-exponential (right) piece
    fz = _PI2_8 + 0.5 * z * z
    b = np.sqrt(_TRUNC_RECIP) * (_TRUNC * z - 1.0)
    a = -np.sqrt(_TRUNC_RECIP) * (_TRUNC * z + 1.0)
    x0 = np.log(fz) + fz * _TRUNC
    xb = x0 - z + special.log_ndtr(b)
    xa = x0 + z + special.log_ndtr(a)
    qdivp = 4.0 / np.pi * (np.exp(xb) + np.exp(xa))
    return 1.0 / (1.0 + qdivp)


def _rtigauss(z, rng):
    """Inverse-Gaussian(1/z, 1) truncated to (0, 0.64), one draw per entry."""
    out = np.empty_like(z)
    small_z = z < _TRUNC_RECIP  # mean 1/z beyond the truncation point

    idx = np.flatnonzero(small_z)
    while idx.size:
        e1 = rng.standard_exponential(idx.size)
        e2 = rng.standard_exponential(idx.size)
        ok = e1 * e1 <= 2.0 * e2 / _TRUNC
        x = _TRUNC / (1.0 + e1 * _TRUNC) ** 2
        alpha = np.exp(-0.5 * z[idx] ** 2 * x)
        ok &= rng.random(idx.size) <= alpha
        out[idx[ok]] = x[ok]
        idx = idx[~ok]

    idx = np.flatnonzero(~small_z)
    while idx.size:
        mu = 1.0 / z[idx]
        y = rng.standard_normal(idx.size) ** 2
        mu_y = mu * y
        x = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        flip = rng.random(idx.size) > mu / (mu + x)
        x = np.where(flip, mu * mu / x, x)
        ok = x < _TRUNC
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def sample_pg(z, rng):
    """Draw ``omega ~ PG(1, z)`` elementwise.

    Parameters
    ----------
    z : float or array_like
        Tilting parameter(s); must be finite.
    rng : numpy.random.Generator

    Returns
    -------
    float or ndarray
        Strictly positive draws with the shape of ``z``.
    """
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("sample_pg requires finite z")
    scalar = z_arr.ndim == 0
    zf = 0.5 * np.abs(z_arr.ravel())
    out = np.empty_like(zf)
    fz = _PI2_8 + 0.5 * zf * zf

    pending = np.arange(zf.size)
    while pending.size:
        zp = zf[pending]
        use_exp = rng.random(pending.size) < _mass_texpon(zp)
        x = np.empty_like(zp)
        n_exp = int(use_exp.sum())
        x[use_exp] = _TRUNC + rng.standard_exponential(n_exp) / fz[pending[use_exp]]
        x[~use_exp] = _rtigauss(zp[~use_exp], rng)

        s = _series_coef(0, x)
        y = rng.random(pending.size) * s
        # alternating-series acceptance test, run on the undecided subset
        undecided = np.arange(pending.size)
        accepted = np.zeros(pending.size, dtype=bool)
        n = 0
        while undecided.size:
            n += 1
            xs = x[undecided]
            if n % 2 == 1:
                s[undecided] -= _series_coef(n, xs)
                acc = y[undecided] <= s[undecided]
                accepted[undecided[acc]] = True
                undecided = undecided[~acc]
            else:
                s[undecided] += _series_coef(n, xs)
                undecided = undecided[y[undecided] <= s[undecided]]
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]

    if scalar:
        return float(out[0])
    return out.reshape(z_arr.shape)


def sample_pg_counts(counts, z, rng):
    """Draw ``PG(b, z)`` for non-negative integer ``b`` as a sum of ``b``
    independent ``PG(1, z)`` draws. ``b == 0`` gives exactly 0."""
    counts = np.asarray(counts, dtype=np.int64)
    z = np.broadcast_to(np.asarray(z, dtype=float), counts.shape)
    total = int(counts.sum())
    out = np.zeros(counts.shape)
    if total == 0:
        return out
    flat_counts = counts.ravel()
    owner = np.repeat(np.arange(flat_counts.size), flat_counts)
    draws = sample_pg(z.ravel()[owner], rng)
    np.add.at(out.reshape(-1), owner, draws)
    return out


def sample_truncnorm01(center, sd, rng):
    """Draw from ``N(center, sd^2)`` restricted to ``(0, 1)`` by inverse CDF.

    Works in log-CDF space on the lower tail of the standardised interval so
    centres far outside the unit interval do not underflow.
    """
    center = np.asarray(center, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    center, sd = np.broadcast_arrays(center, sd)
    lo = (0.0 - center) / sd
    hi = (1.0 - center) / sd
    # reflect so the interval sits on the side with the better-resolved tail
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    log_fa = special.log_ndtr(a)
    log_fb = special.log_ndtr(b)
    u = rng.random(center.shape)
    # log(F(a) + u (F(b) - F(a))), computed stably
    log_f = log_fa + np.log1p(u * np.expm1(log_fb - log_fa))
    w = special.ndtri_exp(np.minimum(log_f, 0.0))
    w = np.clip(w, a, b)
    x = np.where(flip, -w, w) * sd + center
    eps = np.finfo(float).tiny
    x = np.clip(x, eps, 1.0 - np.finfo(float).epsneg)
    if x.ndim == 0:
        return float(x)
    return x
