"""scikit-learn style front end for fitting the link model."""

import numpy as np
from sklearn.base import BaseEstimator

from . import gibbs, netdata, posterior
from .model import Hyperparams


def check_network_data(data, tiers=None):
    """Validate a ``NetworkData`` bundle, optionally re-deriving its prior.

    Raises
    ------
    DataError
        With the full violation report when any invariant fails.
    """
    if not isinstance(data, netdata.NetworkData):
        raise TypeError(f"expected NetworkData, got {type(data).__name__}")
    if tiers is not None:
        data = netdata.with_prior(data, tiers)
    report = netdata.validate_inputs(data)
    if report:
        raise netdata.DataError("invalid input data:\n  " + "\n  ".join(report))
    return data


def check_threshold(threshold):
    t = float(threshold)
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return t


class COILLinkPredictor(BaseEstimator):
    """Latent-factor link predictor with occurrence-aware observation model.

    Parameters
    ----------
    variant : {"COIL", "COIL_PLUS"}
    prior : str, dict, tuple or None
        Occurrence prior scenario (``naive``, ``default75``, ``expert``) or a
        tier map. ``None`` keeps the prior already attached to the data.
    n_iter, n_burn, thin, n_chains, seed, n_jobs
        Chain settings.
    H : int
        Latent dimension upper bound.
    checkpoint_dir, checkpoint_every
        Optional checkpointing.

    Attributes
    ----------
    mean_prob_ : ndarray (n_F, n_P)
    summary_ : PosteriorSummary
    chains_ : list of ChainOutput
    rhat_ : float
    """

    def __init__(self, variant="COIL_PLUS", prior="default75", n_iter=20000, n_burn=10000,
                 thin=0.05, n_chains=4, seed=0, n_jobs=1, H=10, checkpoint_dir=None,
                 checkpoint_every=0):
        self.variant = variant
        self.prior = prior
        self.n_iter = n_iter
        self.n_burn = n_burn
        self.thin = thin
        self.n_chains = n_chains
        self.seed = seed
        self.n_jobs = n_jobs
        self.H = H
        self.checkpoint_dir = checkpoint_dir
        self.checkpoint_every = checkpoint_every

    def chain_config(self):
        return gibbs.ChainConfig(n_iter=self.n_iter, n_burn=self.n_burn,
                                 thin_keep_fraction=self.thin, n_chains=self.n_chains,
                                 seed=self.seed, sampler_variant=self.variant,
                                 hyperparams=Hyperparams(H=self.H),
                                 checkpoint_every=self.checkpoint_every)

    def fit(self, data, y=None):
        data = check_network_data(data, self.prior)
        cfg = self.chain_config()
        self.chains_ = gibbs.run_chains(data, cfg, n_jobs=self.n_jobs,
                                        checkpoint_dir=self.checkpoint_dir)
        self.summary_ = posterior.summarize(self.chains_, data.A, data=data)
        self.mean_prob_ = self.summary_.mean_prob
        self.rhat_ = self.summary_.rhat
        self.data_ = data
        return self

    def _check_fitted(self):
        if not hasattr(self, "mean_prob_"):
            raise RuntimeError("estimator is not fitted yet; call fit first")

    def predict_proba(self, data=None):
        """Posterior mean link probability for every animal-plant pair."""
        self._check_fitted()
        return self.mean_prob_

    def predict(self, data=None, threshold=0.5):
        """Pairs whose posterior mean link probability exceeds ``threshold``."""
        self._check_fitted()
        return self.mean_prob_ > check_threshold(threshold)

    def new_links(self, threshold=0.75):
        """(i, j) index pairs predicted above ``threshold`` with no record."""
        self._check_fitted()
        observed = self.data_.A.pair_counts() > 0
        return np.argwhere((self.mean_prob_ > check_threshold(threshold)) & ~observed)
