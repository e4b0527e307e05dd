"""MCMC kernel for the link model and chain orchestration.

One sweep runs, in order: links (with the detection indicators they
expose), Polya-Gamma auxiliaries, latent factors U then V, shrinkage weights
and baseline, phylogenetic mixing weights, trait coefficients, detection
coefficients, occurrence.

``COIL`` draws occurrence indicators by Gibbs with the prior centres held
fixed; ``COIL_PLUS`` jointly proposes an indicator and its probability per
species-study cell and accepts the pair by Metropolis-Hastings.
"""

import logging
import os
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import model
from .model import Exposure, Hyperparams, LatentState, clamp_prob
from .pgrand import rng_stream, sample_pg, sample_pg_counts, sample_truncnorm01

logger = logging.getLogger(__name__)

VARIANTS = ("COIL", "COIL_PLUS")


class NumericError(RuntimeError):
    """A numeric failure inside the sampler, tagged with where it happened."""


def normalize_variant(variant):
    v = str(variant).upper().replace("+", "_PLUS").replace("COILPLUS", "COIL_PLUS")
    if v not in VARIANTS:
        raise ValueError(f"unknown sampler variant {variant!r}")
    return v


@dataclass
class ChainConfig:
    n_iter: int = 20000
    n_burn: int = 10000
    thin_keep_fraction: float = 0.05
    n_chains: int = 4
    seed: int = 0
    sampler_variant: str = "COIL_PLUS"
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    checkpoint_every: int = 0

    def __post_init__(self):
        self.sampler_variant = normalize_variant(self.sampler_variant)
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("need 0 <= n_burn < n_iter")
        if not 0 < self.thin_keep_fraction <= 1:
            raise ValueError("thin_keep_fraction must lie in (0, 1]")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    def retained_iterations(self):
        """Iteration indices whose samples are kept (evenly spaced, ending at the last)."""
        n_post = self.n_iter - self.n_burn
        n_keep = int(np.floor(self.thin_keep_fraction * n_post + 1e-9))
        k = np.arange(1, n_keep + 1)
        return self.n_burn + (k * n_post) // n_keep - 1 if n_keep else np.zeros(0, dtype=int)


@dataclass
class ChainOutput:
    prob_samples: np.ndarray  # R x n_F x n_P, float32
    loglik_trace: np.ndarray
    occ_F_samples: np.ndarray  # R x n_F x n_S
    occ_P_samples: np.ndarray
    rho_U_trace: np.ndarray
    rho_V_trace: np.ndarray
    lambda0_trace: np.ndarray
    accept: dict
    variant: str
    retained_iters: np.ndarray
    chain_id: int = 0
    seed: int = 0

    @property
    def n_samples(self):
        return self.prob_samples.shape[0]

    def acceptance_rate(self, side=None):
        a = self.accept
        if side is None:
            acc, prop = a["accepted_F"] + a["accepted_P"], a["proposed_F"] + a["proposed_P"]
        else:
            acc, prop = a[f"accepted_{side}"], a[f"proposed_{side}"]
        return acc / prop if prop else float("nan")


def _chol_sample(prec, lin, rng, where):
    """Draw from ``N(prec^{-1} lin, prec^{-1})``; one jitter retry."""
    for jitter in (0.0, 1e-8):
        try:
            c = linalg.cholesky(prec + jitter * np.eye(prec.shape[0]), lower=True,
                                check_finite=False)
            break
        except linalg.LinAlgError:
            continue
    else:
        raise NumericError(f"{where}: conditional precision is not positive definite")
    mean = linalg.cho_solve((c, True), lin, check_finite=False)
    z = rng.standard_normal(lin.shape)
    return mean + linalg.solve_triangular(c.T, z, lower=False, check_finite=False)


class _Side:
    """Per-side constants: phylogeny eigendecomposition and trait data."""

    def __init__(self, C, traits):
        C = (np.asarray(C, dtype=float) + np.asarray(C, dtype=float).T) / 2
        evals, self.Q = np.linalg.eigh(C)
        self.evals = np.clip(evals, 0.0, None)
        self.n = C.shape[0]
        self.T = traits.values
        self.cont = np.array([k == "continuous" for k in traits.kinds], dtype=bool)
        self.binary = ~self.cont
        self._sinv = {}

    def sigma_inv(self, rho):
        key = float(rho)
        if key not in self._sinv:
            d = 1.0 / (rho * self.evals + 1.0 - rho)
            self._sinv[key] = (self.Q * d) @ self.Q.T
        return self._sinv[key]

    def rho_logdens(self, Z, grid):
        zt = self.Q.T @ Z  # n x H
        ss = np.sum(zt * zt, axis=1)  # per eigen-direction
        denom = np.outer(grid, self.evals) + (1.0 - grid)[:, None]
        H = Z.shape[1]
        return -0.5 * (ss / denom).sum(axis=1) - 0.5 * H * np.log(denom).sum(axis=1)


class GibbsSampler:
    """Holds one chain's state plus cached derived quantities.

    ``psi`` (interaction logits), ``p`` and ``q`` are caches refreshed by the
    blocks that change them; the discrete updates read only the caches, so
    tests may freeze the continuous parameters by assigning the caches and
    calling the discrete blocks alone.
    """

    def __init__(self, data, hyper=None, variant="COIL_PLUS", rng=None, state=None):
        self.data = data
        self.hyper = hyper or Hyperparams()
        self.variant = normalize_variant(variant)
        self.rng = rng if rng is not None else rng_stream(0)
        self.ex = Exposure(data)
        self.sideU = _Side(data.phylo.C_U, data.X)
        self.sideV = _Side(data.phylo.C_V, data.W)
        self.grid = np.asarray(self.hyper.rho_grid)
        self.P_OF = np.asarray(data.prior.P_OF, dtype=float)
        self.P_OP = np.asarray(data.prior.P_OP, dtype=float)
        self.accept = dict(accepted_F=0, proposed_F=0, accepted_P=0, proposed_P=0, flips=0,
                           switch_accepted_F=0, switch_proposed_F=0,
                           switch_accepted_P=0, switch_proposed_P=0)
        self.state = state if state is not None else self.init_state()
        self.refresh()
        self.last_r = None
        self.aux = {}
        if self.state.n10 is None:
            self.draw_detection_indicators()

    # ------------------------------------------------------------ setup
    def init_state(self):
        h, rng = self.hyper, self.rng
        n_F, n_P, n_S = self.data.dims
        H = h.H
        ex = self.ex
        density = clamp_prob(ex.obs_pair.mean()) if ex.obs_pair.size else 0.5
        pX, pW = self.sideU.T.shape[1], self.sideV.T.shape[1]

        O_F = rng.random((n_F, n_S)) < self.P_OF
        O_P = rng.random((n_P, n_S)) < self.P_OP
        O_F |= ex.seen_F
        O_P |= ex.seen_P
        if self.variant == "COIL_PLUS":
            pi_F = sample_truncnorm01(self.P_OF, h.occ_prior_sd, rng)
            pi_P = sample_truncnorm01(self.P_OP, h.occ_prior_sd, rng)
        else:
            pi_F, pi_P = self.P_OF.copy(), self.P_OP.copy()
        pi_F[ex.seen_F] = 1.0
        pi_P[ex.seen_P] = 1.0
        L = ex.obs_pair | (rng.random((n_F, n_P)) < 0.05)
        return LatentState(
            U=0.1 * rng.standard_normal((n_F, H)),
            V=0.1 * rng.standard_normal((n_P, H)),
            lambda0=float(model.logit(density)),
            mgp_deltas=model.sample_mgp_deltas(H, h.mgp_a1, h.mgp_a2, rng),
            rho_U=0.5, rho_V=0.5,
            beta0=np.zeros(pX), beta=np.zeros((pX, H)),
            gamma0=np.zeros(pW), gamma=np.zeros((pW, H)),
            trait_var_X=np.ones(pX), trait_var_W=np.ones(pW),
            delta0=0.0, delta=np.zeros(H), zeta0=0.0, zeta=np.zeros(H),
            L=L, O_F=O_F, O_P=O_P, pi_F=pi_F, pi_P=pi_P,
        )

    def refresh(self):
        s = self.state
        self.psi = model.interaction_logits(s)
        self.p = expit(s.delta0 + s.U @ s.delta)
        self.q = expit(s.zeta0 + s.V @ s.zeta)

    # ------------------------------------------------------------ links
    def update_links(self):
        s, ex = self.state, self.ex
        m = ex.exposure(s.O_F, s.O_P)
        pq = clamp_prob(np.outer(self.p, self.q))
        r = expit(self.psi + m * np.log1p(-pq))
        r[ex.obs_pair] = 1.0
        s.L = (self.rng.random(r.shape) < r) | ex.obs_pair
        self.last_r = r
        self._m = m
        return r

    def draw_detection_indicators(self, m=None):
        """Per pair, split the no-record exposures among (1,0), (0,1), (0,0)."""
        s, ex = self.state, self.ex
        if m is None:
            m = ex.exposure(s.O_F, s.O_P)
        c = np.where(s.L, m - ex.n_obs, 0)
        p = self.p[:, None]
        q = self.q[None, :]
        p10 = clamp_prob(p * (1 - q) / clamp_prob(1 - p * q))
        s.n10 = self.rng.binomial(c, p10)
        s.n01 = self.rng.binomial(c - s.n10, np.broadcast_to(clamp_prob(q), c.shape))
        self._m = m

    def detection_counts(self):
        """(successes, trials) per animal and per plant."""
        s, ex = self.state, self.ex
        m = self._m * s.L
        rec = ex.n_obs
        return ((rec + s.n10).sum(axis=1), m.sum(axis=1),
                (rec + s.n01).sum(axis=0), m.sum(axis=0))

    # -------------------------------------------------------- auxiliaries
    def _pg_batch(self, parts):
        """One PG pass over several blocks; ``parts`` holds ``(counts or None, z)``."""
        zs = [np.asarray(z, dtype=float) for _, z in parts]
        counts = np.concatenate([np.ones(z.size, dtype=np.int64) if c is None
                                 else np.asarray(c, dtype=np.int64).ravel()
                                 for (c, _), z in zip(parts, zs)])
        draws = sample_pg_counts(counts, np.concatenate([z.ravel() for z in zs]), self.rng)
        out, k = [], 0
        for z in zs:
            out.append(draws[k:k + z.size].reshape(z.shape))
            k += z.size
        return out

    def _binary_trait_etas(self):
        s = self.state
        return [b0[side.binary] + Z @ B[side.binary].T
                for side, Z, b0, B in ((self.sideU, s.U, s.beta0, s.beta),
                                       (self.sideV, s.V, s.gamma0, s.gamma))]

    def draw_auxiliaries(self):
        # D is marginalised out of the link step; drawing it here completes a blocked (L, D) update
        self.draw_detection_indicators(self._m)
        s = self.state
        kF, nF, kP, nP = self.detection_counts()
        etaX, etaW = self._binary_trait_etas()
        om_int, om_DF, om_DP, om_bX, om_bW = self._pg_batch([
            (None, self.psi), (nF, s.delta0 + s.U @ s.delta), (nP, s.zeta0 + s.V @ s.zeta),
            (None, etaX), (None, etaW)])
        aux = {"omega_int": om_int, "kappa_int": s.L - 0.5,
               "omega_DF": om_DF, "kappa_DF": kF - nF / 2.0,
               "omega_DP": om_DP, "kappa_DP": kP - nP / 2.0}
        for key, side, om_b in (("X", self.sideU, om_bX), ("W", self.sideV, om_bW)):
            om = np.zeros_like(side.T)
            om[:, side.binary] = om_b
            aux["omega_" + key] = om
        self.aux = aux
        return aux

    def _trait_weights(self, side, omega, tvar):
        # pseudo-observation precision W and response R (R = W * target)
        T = side.T
        W = np.where(side.cont[None, :], 1.0 / tvar[None, :], omega)
        R = np.where(side.cont[None, :], T / tvar[None, :], T - 0.5)
        return W, R

    # ---------------------------------------------------------- factors
    def update_latent_factors(self, which="U"):
        s, aux = self.state, self.aux
        lam = s.lam
        if which == "U":
            Z, partner, side = s.U, s.V, self.sideU
            om, ka = aux["omega_int"], aux["kappa_int"]
            t0, B, tvar, omT = s.beta0, s.beta, s.trait_var_X, aux["omega_X"]
            d0, d, omD, kaD = s.delta0, s.delta, aux["omega_DF"], aux["kappa_DF"]
            rho = s.rho_U
        else:
            Z, partner, side = s.V, s.U, self.sideV
            om, ka = aux["omega_int"].T, aux["kappa_int"].T
            t0, B, tvar, omT = s.gamma0, s.gamma, s.trait_var_W, aux["omega_W"]
            d0, d, omD, kaD = s.zeta0, s.zeta, aux["omega_DP"], aux["kappa_DP"]
            rho = s.rho_V
        Sinv = side.sigma_inv(rho)
        WT, RT = self._trait_weights(side, omT, tvar)
        psi = s.lambda0 + (Z * lam) @ partner.T
        etaT = t0[None, :] + Z @ B.T
        etaD = d0 + Z @ d
        for h in range(Z.shape[1]):
            a = lam[h] * partner[:, h]
            zh = Z[:, h]
            c = psi - np.outer(zh, a)
            prec = om @ (a * a)
            lin = (ka - om * c) @ a
            if B.shape[0]:
                offT = etaT - np.outer(zh, B[:, h])
                prec += WT @ (B[:, h] ** 2)
                lin += (RT - WT * offT) @ B[:, h]
            offD = etaD - zh * d[h]
            prec += d[h] ** 2 * omD
            lin += d[h] * (kaD - omD * offD)
            new = _chol_sample(Sinv + np.diag(prec), lin, self.rng, f"factors {which}[:, {h}]")
            Z[:, h] = new
            psi = c + np.outer(new, a)
            if B.shape[0]:
                etaT = offT + np.outer(new, B[:, h])
            etaD = offD + new * d[h]
        self.refresh()

    # -------------------------------------------------------- shrinkage
    def update_shrinkage(self):
        s, h, rng = self.state, self.hyper, self.rng
        om, ka = self.aux["omega_int"], self.aux["kappa_int"]
        v = h.coef_prior_var
        rest = self.psi - s.lambda0
        prec = om.sum() + 1.0 / v
        mean = (ka - om * rest).sum() / prec
        s.lambda0 = float(mean + rng.standard_normal() / np.sqrt(prec))

        # augmented log-likelihood is quadratic in the weight vector
        U, V = s.U, s.V
        H = U.shape[1]
        b = np.einsum("ih,ij,jh->h", U, ka - om * s.lambda0, V)
        UU = (U[:, :, None] * U[:, None, :]).reshape(U.shape[0], H * H)
        VV = (V[:, :, None] * V[:, None, :]).reshape(V.shape[0], H * H)
        M = np.einsum("ik,ik->k", UU, om @ VV).reshape(H, H)

        def loglik(lam):
            return lam @ b - 0.5 * lam @ M @ lam

        logd = np.log(s.mgp_deltas)
        cur_ll = loglik(1.0 / np.cumprod(np.exp(logd)))
        shapes = np.full(H, h.mgp_a2)
        shapes[0] = h.mgp_a1
        for l in range(H):
            prop = logd.copy()
            prop[l] += h.mgp_step * rng.standard_normal()
            lam_p = 1.0 / np.cumprod(np.exp(prop))
            ll_p = loglik(lam_p)
            # Gamma(shape, 1) prior on delta_l, random walk on log delta_l
            log_a = (ll_p - cur_ll + shapes[l] * (prop[l] - logd[l])
                     - (np.exp(prop[l]) - np.exp(logd[l])))
            if np.log(rng.random()) < log_a:
                logd, cur_ll = prop, ll_p
        s.mgp_deltas = np.exp(logd)
        self.refresh()

    # -------------------------------------------------------------- rho
    def update_rho(self):
        s, rng = self.state, self.rng
        for side, attr, Z in ((self.sideU, "rho_U", s.U), (self.sideV, "rho_V", s.V)):
            lp = side.rho_logdens(Z, self.grid)
            if not np.any(np.isfinite(lp)):
                raise NumericError(f"{attr}: all grid log-densities are -inf")
            w = np.exp(lp - lp.max())
            setattr(s, attr, float(rng.choice(self.grid, p=w / w.sum())))

    # ---------------------------------------------------- trait coeffs
    def update_trait_coeffs(self):
        s, h, rng = self.state, self.hyper, self.rng
        a0, b0 = h.trait_var_prior
        v = h.coef_prior_var
        # fresh auxiliaries for every binary column; each column only moves its own coefficients
        om_bin = self._pg_batch([(None, eta) for eta in self._binary_trait_etas()])
        for side, Z, icpt, B, tvar, om_b in (
                (self.sideU, s.U, s.beta0, s.beta, s.trait_var_X, om_bin[0]),
                (self.sideV, s.V, s.gamma0, s.gamma, s.trait_var_W, om_bin[1])):
            if not side.T.shape[1]:
                continue
            bin_pos = np.cumsum(side.binary) - 1
            D = np.column_stack([np.ones(Z.shape[0]), Z])
            prior_prec = np.eye(D.shape[1]) / v
            for l in range(side.T.shape[1]):
                y = side.T[:, l]
                if side.cont[l]:
                    prec = D.T @ D / tvar[l] + prior_prec
                    coef = _chol_sample(prec, D.T @ y / tvar[l], rng, f"trait coeffs {l}")
                    resid = y - D @ coef
                    tvar[l] = 1.0 / rng.gamma(a0 + 0.5 * len(y), 1.0 / (b0 + 0.5 * resid @ resid))
                else:
                    om = om_b[:, bin_pos[l]]
                    prec = (D * om[:, None]).T @ D + prior_prec
                    coef = _chol_sample(prec, D.T @ (y - 0.5), rng, f"trait coeffs {l}")
                icpt[l] = coef[0]
                B[l] = coef[1:]

    # ------------------------------------------------------- detection
    def update_detection(self):
        s, rng = self.state, self.rng
        self.draw_detection_indicators(self._m)
        kF, nF, kP, nP = self.detection_counts()
        v = self.hyper.coef_prior_var
        oms = self._pg_batch([(nF, s.delta0 + s.U @ s.delta), (nP, s.zeta0 + s.V @ s.zeta)])
        for Z, k, n, which, om in ((s.U, kF, nF, "delta", oms[0]), (s.V, kP, nP, "zeta", oms[1])):
            D = np.column_stack([np.ones(Z.shape[0]), Z])
            prec = (D * om[:, None]).T @ D + np.eye(D.shape[1]) / v
            coef = _chol_sample(prec, D.T @ (k - n / 2.0), rng, f"detection {which}")
            if which == "delta":
                s.delta0, s.delta = float(coef[0]), coef[1:]
            else:
                s.zeta0, s.zeta = float(coef[0]), coef[1:]
        self.refresh()

    # ------------------------------------------------------ occurrence
    def occurrence_loglik(self, side, W=None):
        """Log-likelihood gain of setting each cell's indicator to 1 (vs 0)."""
        s, ex = self.state, self.ex
        if W is None:
            W = s.L * np.log1p(-clamp_prob(np.outer(self.p, self.q)))
        if side == "F":
            return ex.animal_cell_sums(W, s.O_P)
        return ex.plant_cell_sums(W, s.O_F)

    def update_occurrence(self):
        W = self.state.L * np.log1p(-clamp_prob(np.outer(self.p, self.q)))
        step = self._occ_gibbs if self.variant == "COIL" else self._occ_mh
        # animal cells first; plant cells then condition on the new animal indicators
        step("F", W)
        step("P", W)
        # exposure cache and D go stale here; the next link step refreshes both

    def _occ_arrays(self, side):
        s, ex = self.state, self.ex
        if side == "F":
            return s.O_F, s.pi_F, self.P_OF, ex.seen_F
        return s.O_P, s.pi_P, self.P_OP, ex.seen_P

    def _occ_gibbs(self, side, W=None):
        O, pi, prior, seen = self._occ_arrays(side)
        free = ~seen & (prior > 0)
        if not free.any():
            return
        ll = self.occurrence_loglik(side, W)[free]
        pf = pi[free]
        with np.errstate(divide="ignore"):
            prob = expit(np.log(pf) + ll - np.log1p(-pf))
        new = self.rng.random(prob.shape) < prob
        self.accept["flips"] += int(np.sum(new != O[free]))
        O[free] = new

    def _occ_mh(self, side, W=None):
        h, rng = self.hyper, self.rng
        O, pi, prior, seen = self._occ_arrays(side)
        free = ~seen
        n = int(free.sum())
        if not n:
            return
        ll = self.occurrence_loglik(side, W)[free]
        o, p, c = O[free], pi[free], prior[free]
        p_star = p + h.mh_step * rng.standard_normal(n)
        o_star = rng.random(n) < np.where(o, 1.0 - h.p10, h.p01)
        inside = (p_star > 0) & (p_star < 1)
        ps = np.where(inside, p_star, 0.5)
        sw = o_star != o
        with np.errstate(divide="ignore"):
            log_a = (np.where(o_star, np.log(ps) + ll, np.log1p(-ps))
                     - np.where(o, np.log(p) + ll, np.log1p(-p))
                     - ((ps - c) ** 2 - (p - c) ** 2) / (2.0 * h.occ_prior_sd ** 2))
        # proposal ratio g(O | O*) / g(O* | O) is 1 unless the indicator switches
        up_ratio = np.log(h.p10) - np.log(h.p01)
        log_a += np.where(sw, np.where(o, -up_ratio, up_ratio), 0.0)
        acc = inside & (np.log(rng.random(n)) < log_a)
        n_acc, n_sw, n_swacc = int(acc.sum()), int(sw.sum()), int((acc & sw).sum())
        a = self.accept
        a[f"accepted_{side}"] += n_acc
        a[f"proposed_{side}"] += n
        a[f"switch_proposed_{side}"] += n_sw
        a[f"switch_accepted_{side}"] += n_swacc
        a["flips"] += n_swacc
        O[free] = np.where(acc, o_star, o)
        pi[free] = np.where(acc, ps, p)

    # ------------------------------------------------------------ sweep
    BLOCKS = ("links", "auxiliaries", "factors_U", "factors_V", "shrinkage", "rho",
              "trait_coeffs", "detection", "occurrence")

    def sweep(self):
        steps = (self.update_links, self.draw_auxiliaries,
                 lambda: self.update_latent_factors("U"),
                 lambda: self.update_latent_factors("V"),
                 self.update_shrinkage, self.update_rho, self.update_trait_coeffs,
                 self.update_detection, self.update_occurrence)
        for name, step in zip(self.BLOCKS, steps):
            self._block = name
            step()

    def log_likelihood(self):
        s, ex = self.state, self.ex
        m = ex.exposure(s.O_F, s.O_P) * s.L
        pq = clamp_prob(np.outer(self.p, self.q))
        return float(np.sum(ex.n_obs * np.log(pq) + (m - ex.n_obs) * np.log1p(-pq)))

    def occurrence_snapshot(self):
        """Per-cell occurrence quantity recorded for summaries: the sampled
        probability under COIL+, the indicator under COIL."""
        s = self.state
        if self.variant == "COIL_PLUS":
            return s.pi_F, s.pi_P
        return s.O_F.astype(float), s.O_P.astype(float)


# ------------------------------------------------------------ chains

def _save_checkpoint(path, payload):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)


def load_checkpoint(path):
    with Path(path).open("rb") as fh:
        return pickle.load(fh)


def run_chain(data, config, chain_id=0, checkpoint_path=None, stop_after=None):
    """Run one chain and return its ``ChainOutput``.

    With ``checkpoint_path`` set and ``config.checkpoint_every > 0`` the
    state and generator position are written every ``checkpoint_every``
    iterations; an existing checkpoint is resumed from. ``stop_after`` ends
    the run early (after that many total iterations) without producing an
    output, which is how interruption is simulated.
    """
    retained = config.retained_iterations()
    keep_slot = {int(t): k for k, t in enumerate(retained)}
    n_F, n_P, n_S = data.dims
    R = len(retained)
    rng = rng_stream(config.seed, chain_id)

    fingerprint = (repr(config.hyperparams), config.sampler_variant, config.seed, chain_id,
                   config.n_iter, config.n_burn, config.thin_keep_fraction, data.dims)
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        ck = load_checkpoint(checkpoint_path)
        if ck.get("fingerprint") != fingerprint:
            raise ValueError(f"checkpoint {checkpoint_path} was written by a different configuration")
        rng.bit_generator.state = ck["rng"]
        sampler = GibbsSampler(data, config.hyperparams, config.sampler_variant, rng,
                               state=ck["state"])
        sampler.accept = ck["accept"]
        sampler._m = ck["m"]
        buf = ck["buffers"]
        start = ck["next_iter"]
    else:
        sampler = GibbsSampler(data, config.hyperparams, config.sampler_variant, rng)
        buf = dict(
            prob=np.zeros((R, n_F, n_P), dtype=np.float32),
            occF=np.zeros((R, n_F, n_S), dtype=np.float32),
            occP=np.zeros((R, n_P, n_S), dtype=np.float32),
            loglik=np.zeros(config.n_iter), rho_U=np.zeros(config.n_iter),
            rho_V=np.zeros(config.n_iter), lambda0=np.zeros(config.n_iter))
        start = 0

    for t in range(start, config.n_iter):
        if stop_after is not None and t >= stop_after:
            return None
        try:
            with np.errstate(over="ignore", under="ignore"):
                sampler.sweep()
        except (NumericError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            raise NumericError(f"chain {chain_id}, iteration {t}, block "
                               f"{getattr(sampler, '_block', '?')}: {exc}") from exc
        s = sampler.state
        buf["loglik"][t] = sampler.log_likelihood()
        buf["rho_U"][t], buf["rho_V"][t], buf["lambda0"][t] = s.rho_U, s.rho_V, s.lambda0
        k = keep_slot.get(t)
        if k is not None:
            buf["prob"][k] = sampler.last_r
            occ_F, occ_P = sampler.occurrence_snapshot()
            buf["occF"][k] = occ_F
            buf["occP"][k] = occ_P
        if (checkpoint_path is not None and config.checkpoint_every
                and (t + 1) % config.checkpoint_every == 0 and t + 1 < config.n_iter):
            _save_checkpoint(checkpoint_path, dict(
                state=sampler.state, rng=rng.bit_generator.state, accept=dict(sampler.accept),
                m=sampler._m, buffers=buf, next_iter=t + 1, fingerprint=fingerprint))

    return ChainOutput(
        prob_samples=buf["prob"], loglik_trace=buf["loglik"],
        occ_F_samples=buf["occF"], occ_P_samples=buf["occP"],
        rho_U_trace=buf["rho_U"], rho_V_trace=buf["rho_V"], lambda0_trace=buf["lambda0"],
        accept=dict(sampler.accept), variant=config.sampler_variant,
        retained_iters=np.asarray(retained), chain_id=chain_id, seed=config.seed)


def _run_chain_job(args):
    data, config, chain_id, ck = args
    return run_chain(data, config, chain_id, ck)


def run_chains(data, config, n_jobs=None, checkpoint_dir=None):
    """Run ``config.n_chains`` chains (streams 0..n-1), in worker processes when ``n_jobs > 1``."""
    jobs = []
    for c in range(config.n_chains):
        ck = None
        if checkpoint_dir is not None and config.checkpoint_every:
            ck = Path(checkpoint_dir) / f"chain{c}.ckpt"
        jobs.append((data, config, c, ck))
    n_jobs = n_jobs or 1
    if n_jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [_run_chain_job(j) for j in jobs]
