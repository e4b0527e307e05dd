"""Posterior summaries and convergence diagnostics for fitted chains."""

from dataclasses import dataclass, field

import numpy as np

from .netdata import TIER_NAMES, occurrence_tiers

DEFAULT_THRESHOLDS = (0.5, 0.75)


@dataclass
class PosteriorSummary:
    mean_prob: np.ndarray
    new_link_counts: dict
    prevalence: dict
    observed_prevalence: float
    n_samples: int
    occ_tier_table: dict = field(default=None)
    rhat: float = float("nan")
    acceptance: dict = field(default_factory=dict)


def _check_outputs(outputs):
    if not outputs:
        raise ValueError("need at least one chain output")
    shape = outputs[0].prob_samples.shape
    for out in outputs[1:]:
        if out.prob_samples.shape != shape:
            raise ValueError(f"chain outputs disagree in shape: {out.prob_samples.shape} vs {shape}")
    return shape


def pooled_prob_samples(outputs):
    _check_outputs(outputs)
    return np.concatenate([o.prob_samples for o in outputs], axis=0)


def summarize(outputs, A, thresholds=DEFAULT_THRESHOLDS, data=None):
    """Pool retained link probabilities across chains.

    Parameters
    ----------
    outputs : list of ChainOutput
    A : ObservedTensor
        Records the fit was conditioned on.
    thresholds : sequence of float
        Cut-offs for new-link counts and prevalence.
    data : NetworkData, optional
        When given, the occurrence tier table is attached.
    """
    shape = _check_outputs(outputs)
    if shape[1:] != tuple(A.dims[:2]):
        raise ValueError(f"samples are {shape[1:]} but records are {A.dims[:2]}")
    total = np.zeros(shape[1:])
    n = 0
    for out in outputs:
        total += out.prob_samples.sum(axis=0, dtype=np.float64)
        n += out.prob_samples.shape[0]
    mean_prob = np.clip(total / max(n, 1), 0.0, 1.0)
    observed = A.pair_counts() > 0
    mean_prob[observed] = 1.0
    counts = {float(t): int(np.sum((mean_prob > t) & ~observed)) for t in thresholds}
    prevalence = {float(t): float(np.mean(mean_prob > t)) for t in thresholds}
    summary = PosteriorSummary(mean_prob=mean_prob, new_link_counts=counts, prevalence=prevalence,
                               observed_prevalence=float(observed.mean()), n_samples=n)
    if len(outputs) >= 2 and outputs[0].loglik_trace.size >= 10:
        burn = outputs[0].retained_iters[0] if outputs[0].retained_iters.size else 0
        summary.rhat = gelman_rubin([o.loglik_trace[burn:] for o in outputs])
    acc = {}
    for key in outputs[0].accept:
        acc[key] = int(sum(o.accept[key] for o in outputs))
    summary.acceptance = acc
    if data is not None:
        summary.occ_tier_table = occurrence_tier_summary(outputs, data)
    return summary


def occurrence_tier_summary(outputs, data):
    """Mean posterior occurrence quantity per proximity tier and side.

    Cells are grouped by the tier of their closest recorded presence; values
    are mean sampled ``pi`` under COIL+ and mean indicator frequency under
    COIL. Tiers with no cells report NaN.

    Returns
    -------
    dict
        ``{"animal": {tier: value}, "plant": {tier: value}, "variant": str}``
    """
    _check_outputs(outputs)
    table = {"variant": outputs[0].variant}
    A = data.A
    for side, seen, attr in (("animal", A.animal_seen(), "occ_F_samples"),
                             ("plant", A.plant_seen(), "occ_P_samples")):
        tiers = occurrence_tiers(seen, data.meta)
        mean = np.mean(np.concatenate([getattr(o, attr) for o in outputs], axis=0), axis=0)
        row = {}
        for k, name in enumerate(TIER_NAMES):
            cells = tiers == k
            row[name] = float(mean[cells].mean()) if cells.any() else float("nan")
        table[side] = row
    return table


def occurrence_means(outputs):
    """Posterior mean occurrence quantity per cell: (n_F x n_S, n_P x n_S)."""
    _check_outputs(outputs)
    F = np.mean(np.concatenate([o.occ_F_samples for o in outputs]), axis=0)
    P = np.mean(np.concatenate([o.occ_P_samples for o in outputs]), axis=0)
    return F, P


def gelman_rubin(traces, split=False):
    """Potential scale reduction factor.

    Parameters
    ----------
    traces : array_like, shape (n_chains, n)
    split : bool
        Split every chain in half first, so within-chain drift also shows.
        Off by default so that exact copies give exactly 1.

    Notes
    -----
    The pooled variance estimate is ``W + B/n``: chains that are exact copies
    give exactly 1.
    """
    x = np.asarray(traces, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 chains")
    if x.shape[1] < 10:
        raise ValueError("need at least 10 draws per chain")
    if split:
        half = x.shape[1] // 2
        x = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    W = np.mean(np.var(x, axis=1, ddof=1))
    B_over_n = np.var(np.mean(x, axis=1), ddof=1)
    if W <= 0:
        return 1.0 if B_over_n <= 0 else float("inf")
    return float(np.sqrt((W + B_over_n) / W))
