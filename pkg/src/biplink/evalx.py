"""Cross-validation by held-out pairs, and trait-matching analyses on
posterior link probabilities."""

from dataclasses import dataclass

import numpy as np

from . import netdata
from .netdata import FocusTensor, ObservedTensor
from .pgrand import rng_stream

HOLDOUT_STREAM = 1000
PERMUTATION_STREAM = 2000
LOGIT_CLAMP = 1e-6


@dataclass(frozen=True)
class HoldoutSpec:
    heldout_pairs: np.ndarray  # (k, 2)
    replicate_id: int
    seed: int
    removed_triples: np.ndarray  # (m, 3) records taken out of A
    was_excluded: np.ndarray  # excluded flag of each heldout pair before the holdout

    def __len__(self):
        return len(self.heldout_pairs)


def make_holdout(data, n_pairs=100, seed=0, replicate_id=0, tiers=None):
    """Hide ``n_pairs`` distinct observed pairs from every study.

    The focus of the heldout pairs is switched off in all studies, their
    records removed, and the occurrence prior rebuilt from the reduced
    records (so a species known only through a heldout record loses its
    certain occurrence).

    Returns
    -------
    (NetworkData, HoldoutSpec)
    """
    pairs = np.argwhere(data.A.pair_counts() > 0)
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    if n_pairs > len(pairs):
        raise ValueError(f"asked for {n_pairs} heldout pairs but only {len(pairs)} are observed")
    rng = rng_stream(seed, HOLDOUT_STREAM + int(replicate_id))
    chosen = pairs[np.sort(rng.choice(len(pairs), size=n_pairs, replace=False))]
    mask = np.zeros(data.A.dims[:2], dtype=bool)
    mask[chosen[:, 0], chosen[:, 1]] = True
    t = data.A.triples
    drop = mask[t[:, 0], t[:, 1]]
    A_new = ObservedTensor(t[~drop], data.A.dims)
    f = data.focus
    excluded = f.excluded.copy()
    was = excluded[chosen[:, 0], chosen[:, 1]].copy()
    excluded[mask] = True
    focus = FocusTensor(f.kinds, f.animal_mask, f.plant_mask, f.pair_triples, excluded)
    tiers = tiers if tiers is not None else data.extra.get("tiers", "default75")
    new = data.with_(A=A_new, focus=focus,
                     prior=netdata.build_occurrence_prior(A_new, data.meta, tiers),
                     extra={**data.extra, "tiers": netdata.check_tiers(tiers)})
    spec = HoldoutSpec(chosen, int(replicate_id), int(seed), t[drop], was)
    return new, spec


def restore_holdout(data, spec, tiers=None):
    """Undo ``make_holdout``: records, focus and prior return to the original."""
    triples = np.concatenate([data.A.triples, spec.removed_triples])
    A = ObservedTensor(triples, data.A.dims)
    f = data.focus
    excluded = f.excluded.copy()
    excluded[spec.heldout_pairs[:, 0], spec.heldout_pairs[:, 1]] = spec.was_excluded
    focus = FocusTensor(f.kinds, f.animal_mask, f.plant_mask, f.pair_triples, excluded)
    tiers = tiers if tiers is not None else data.extra.get("tiers", "default75")
    return data.with_(A=A, focus=focus, prior=netdata.build_occurrence_prior(A, data.meta, tiers))


# ------------------------------------------------------------- metrics

def _heldout_values(mean_prob, holdout):
    pairs = holdout.heldout_pairs if isinstance(holdout, HoldoutSpec) else np.asarray(holdout)
    if len(pairs) == 0:
        raise ValueError("empty holdout")
    return np.asarray(mean_prob)[pairs[:, 0], pairs[:, 1]]


def pseudo_precision(mean_prob, holdout):
    """Mean probability on heldout pairs over the mean probability of all pairs."""
    denom = float(np.mean(mean_prob))
    if denom <= 0:
        raise ValueError("mean link probability is zero; pseudo-precision undefined")
    return float(np.mean(_heldout_values(mean_prob, holdout)) / denom)


def recall_at(mean_prob, holdout, threshold):
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return float(np.mean(_heldout_values(mean_prob, holdout) > threshold))


def admissible_interval(mean_prob):
    """``(1, 1/prevalence)`` with prevalence the mean posterior link probability.

    An uninformative predictor sits at the lower end and a perfect one at
    the upper end.
    """
    prev = float(np.mean(mean_prob))
    return 1.0, (1.0 / prev if prev > 0 else float("inf"))


# -------------------------------------------------------------- traits

def logit_samples(prob_samples, side="animal"):
    """Clamped logit of retained probabilities, oriented species x partner per sample."""
    p = np.clip(np.asarray(prob_samples, dtype=float), LOGIT_CLAMP, 1 - LOGIT_CLAMP)
    z = np.log(p) - np.log1p(-p)
    return z if side == "animal" else np.swapaxes(z, 1, 2)


def _standardised_trait(trait):
    x = np.asarray(trait, dtype=float)
    sd = x.std()
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("trait column is constant; correlation undefined")
    return (x - x.mean()) / sd


def _standardised_columns(logits):
    """(n, R*J) matrix of standardised logit vectors plus a mask of usable ones."""
    z = np.asarray(logits, dtype=float)
    R, n, J = z.shape
    Y = np.moveaxis(z, 1, 0).reshape(n, R * J)
    Y = Y - Y.mean(axis=0)
    sd = Y.std(axis=0)
    ok = sd > 1e-12
    Y[:, ok] /= sd[ok]
    return Y, ok


def variable_importance(trait, logits, B=100, seed=0, return_details=False):
    """Standardised gap between the observed trait-logit association and its
    permutation null.

    Parameters
    ----------
    trait : (n,) array
    logits : (R, n, J) array
        Per-sample logit link probabilities, species by partner.
    B : int
        Number of permutations.
    seed : int
        Seed for the evaluation permutation stream.

    Returns
    -------
    float, or (float, dict) with ``return_details``.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    x = _standardised_trait(trait)
    Y, ok = _standardised_columns(logits)
    if not ok.any():
        raise ValueError("every logit vector is constant")
    Y = Y[:, ok]
    n = len(x)
    t_hat = float(np.mean((x @ Y / n) ** 2))
    rng = rng_stream(seed, PERMUTATION_STREAM)
    perms = np.stack([x[rng.permutation(n)] for _ in range(B)])
    t0 = np.mean((perms @ Y / n) ** 2, axis=1)
    sd0 = t0.std(ddof=1)
    vi = abs(t_hat - t0.mean()) / sd0 if sd0 > 0 else float("inf")
    if return_details:
        return float(vi), {"T_hat": t_hat, "T_null_mean": float(t0.mean()),
                           "T_null_sd": float(sd0), "n_skipped": int((~ok).sum())}
    return float(vi)


def signed_trait_correlations(trait, logits):
    """Posterior mean correlation of the trait with each partner's logit vector.

    Sample/partner combinations whose logit vector is constant are skipped;
    a partner with no usable sample gets NaN.
    """
    x = _standardised_trait(trait)
    z = np.asarray(logits, dtype=float)
    R, n, J = z.shape
    Y, ok = _standardised_columns(z)
    corr = (x @ Y / n).reshape(R, J)
    ok = ok.reshape(R, J)
    cnt = ok.sum(axis=0)
    tot = np.where(ok, corr, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / cnt, np.nan)
