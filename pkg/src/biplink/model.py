"""Parameter state, priors and likelihood of the covariate-informed
latent factor link model.

Links follow ``logit P(L_ij = 1) = lambda0 + sum_h lambda_h U_ih V_jh``;
a true link between co-occurring focal species is recorded with probability
``p_i q_j`` and never otherwise.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

PROB_FLOOR = 1e-12

DEFAULT_RHO_GRID = (0.01,) + tuple(np.round(np.arange(0.05, 0.951, 0.05), 2)) + (0.99,)


def clamp_prob(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def logit(p):
    p = clamp_prob(np.asarray(p, dtype=float))
    return np.log(p) - np.log1p(-p)


@dataclass
class Hyperparams:
    H: int = 10
    mgp_a1: float = 2.0
    mgp_a2: float = 3.0
    coef_prior_var: float = 4.0
    rho_grid: tuple = DEFAULT_RHO_GRID
    occ_prior_sd: float = 1.0
    mh_step: float = 0.1
    p01: float = 0.25
    p10: float = 0.65
    trait_var_prior: tuple = (2.0, 1.0)
    mgp_step: float = 0.3

    def __post_init__(self):
        self.rho_grid = tuple(float(r) for r in self.rho_grid)
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if not self.rho_grid or min(self.rho_grid) <= 0 or max(self.rho_grid) >= 1:
            raise ValueError("rho grid must lie strictly inside (0, 1)")
        for name in ("p01", "p10"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.occ_prior_sd <= 0 or self.mh_step <= 0:
            raise ValueError("occ_prior_sd and mh_step must be positive")


@dataclass
class LatentState:
    """Mutable chain state. Detection indicators are kept as per-pair counts
    over the exchangeable exposed triples of that pair with no record:
    ``n10`` (animal detected only) and ``n01`` (plant detected only)."""

    U: np.ndarray
    V: np.ndarray
    lambda0: float
    mgp_deltas: np.ndarray
    rho_U: float
    rho_V: float
    beta0: np.ndarray
    beta: np.ndarray  # p_M x H
    gamma0: np.ndarray
    gamma: np.ndarray  # p_P x H
    trait_var_X: np.ndarray  # per column; unused for binary columns
    trait_var_W: np.ndarray
    delta0: float
    delta: np.ndarray
    zeta0: float
    zeta: np.ndarray
    L: np.ndarray  # n_F x n_P bool
    O_F: np.ndarray  # n_F x n_S bool
    O_P: np.ndarray  # n_P x n_S bool
    pi_F: np.ndarray
    pi_P: np.ndarray
    n10: np.ndarray = field(default=None)
    n01: np.ndarray = field(default=None)

    @property
    def lam(self):
        return 1.0 / np.cumprod(self.mgp_deltas)

    @property
    def p(self):
        return expit(self.delta0 + self.U @ self.delta)

    @property
    def q(self):
        return expit(self.zeta0 + self.V @ self.zeta)

    def copy(self):
        kw = {}
        for k, v in self.__dict__.items():
            kw[k] = v.copy() if isinstance(v, np.ndarray) else v
        return LatentState(**kw)


# ----------------------------------------------------------- predictors

def interaction_logit(i, j, state):
    return float(state.lambda0 + np.sum(state.lam * state.U[i] * state.V[j]))


def interaction_logits(state):
    """All ``n_F x n_P`` interaction logits."""
    return state.lambda0 + (state.U * state.lam) @ state.V.T


def build_sigma(rho, C):
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    C = np.asarray(C, dtype=float)
    return rho * C + (1.0 - rho) * np.eye(C.shape[0])


def observation_prob(l, f, o, p_i, q_j):
    if l * f * o == 0:
        return 0.0
    return p_i * q_j


def trait_predictor(side, col, state):
    """Linear predictor of trait column ``col`` (identity or logit scale)."""
    if side == "animal":
        return state.beta0[col] + state.U @ state.beta[col]
    if side == "plant":
        return state.gamma0[col] + state.V @ state.gamma[col]
    raise ValueError(f"side must be 'animal' or 'plant', not {side!r}")


def detection_logit(side, index, state):
    if side == "animal":
        return float(state.delta0 + state.U[index] @ state.delta)
    if side == "plant":
        return float(state.zeta0 + state.V[index] @ state.zeta)
    raise ValueError(f"side must be 'animal' or 'plant', not {side!r}")


# ------------------------------------------------------------ exposure

class Exposure:
    """Precomputed focus/observation structure for fast exposure counts.

    ``F[i,j,s] = (am[i,s] & pm[j,s] | pair(i,j,s)) & keep[i,j]``; the
    exposure of a pair is ``sum_s F[i,j,s] O_F[i,s] O_P[j,s]``.
    """

    def __init__(self, data):
        A, focus = data.A, data.focus
        self.dims = A.dims
        self.am = focus.animal_mask.astype(np.float64)
        self.pm = focus.plant_mask.astype(np.float64)
        self.keep = (~focus.excluded).astype(np.float64)
        pt = focus.pair_triples
        if len(pt):
            pt = pt[~focus.excluded[pt[:, 0], pt[:, 1]]]
        self.pi, self.pj, self.ps = pt[:, 0], pt[:, 1], pt[:, 2]
        self.n_obs = A.pair_counts()
        self.obs_pair = self.n_obs > 0
        self.seen_F = A.animal_seen()
        self.seen_P = A.plant_seen()
        self.A = A

    def exposure(self, O_F, O_P):
        """``m_ij``: number of studies in which pair (i, j) is exposed."""
        m = (self.am * O_F) @ (self.pm * O_P).T
        m *= self.keep
        if self.pi.size:
            w = (O_F[self.pi, self.ps] & O_P[self.pj, self.ps]).astype(np.float64)
            np.add.at(m, (self.pi, self.pj), w)
        return np.rint(m).astype(np.int64)

    def animal_cell_sums(self, M, O_P):
        """``sum_j F[i,j,s] O_P[j,s] M[i,j]`` for every animal-study cell."""
        out = self.am * ((M * self.keep) @ (self.pm * O_P))
        if self.pi.size:
            w = O_P[self.pj, self.ps] * M[self.pi, self.pj] * self.keep[self.pi, self.pj]
            np.add.at(out, (self.pi, self.ps), w)
        return out

    def plant_cell_sums(self, M, O_F):
        """``sum_i F[i,j,s] O_F[i,s] M[i,j]`` for every plant-study cell."""
        out = self.pm * ((M * self.keep).T @ (self.am * O_F))
        if self.pi.size:
            w = O_F[self.pi, self.ps] * M[self.pi, self.pj] * self.keep[self.pi, self.pj]
            np.add.at(out, (self.pj, self.ps), w)
        return out


def log_likelihood(state, data, exposure=None):
    """Log-probability of the records given ``L``, ``O``, ``p``, ``q``.

    Sums ``a log(p q) + (1 - a) log(1 - p q)`` over exposed triples with a
    true link; returns ``-inf`` when a record sits on a triple that cannot be
    observed.
    """
    ex = exposure if exposure is not None else Exposure(data)
    A = data.A
    if len(A):
        F = data.focus
        focused = ((F.animal_mask[A.i, A.s] & F.plant_mask[A.j, A.s])
                   & ~F.excluded[A.i, A.j])
        if len(F.pair_triples):
            pt = {tuple(t) for t in F.pair_triples.tolist()}
            focused |= np.array([(i, j, s) in pt for i, j, s in A.triples.tolist()])
        ok = focused & state.L[A.i, A.j] & state.O_F[A.i, A.s] & state.O_P[A.j, A.s]
        if not np.all(ok):
            return -np.inf
    m = ex.exposure(state.O_F, state.O_P) * state.L
    pq = clamp_prob(np.outer(state.p, state.q))
    n_obs = ex.n_obs
    return float(np.sum(n_obs * np.log(pq) + (m - n_obs) * np.log1p(-pq)))


def log_likelihood_bruteforce(state, data):
    """Direct triple-by-triple product of the observation model (test oracle)."""
    A = data.A.to_dense()
    F = data.focus.to_dense()
    p, q = state.p, state.q
    total = 0.0
    n_F, n_P, n_S = A.shape
    for i in range(n_F):
        for j in range(n_P):
            for s in range(n_S):
                prob = observation_prob(int(state.L[i, j]), int(F[i, j, s]),
                                        int(state.O_F[i, s] and state.O_P[j, s]), p[i], q[j])
                pa = prob if A[i, j, s] else 1.0 - prob
                if pa <= 0:
                    return -np.inf
                total += np.log(pa)
    return total


# -------------------------------------------------------------- priors

def sample_mgp_deltas(H, a1, a2, rng, size=None):
    shape = (H,) if size is None else (size, H)
    d = rng.gamma(a2, 1.0, size=shape)
    d[..., 0] = rng.gamma(a1, 1.0, size=shape[:-1])
    return d


def mgp_log_prior(deltas, a1, a2):
    deltas = np.asarray(deltas, dtype=float)
    shapes = np.full(deltas.shape[-1], a2)
    shapes[0] = a1
    return float(np.sum((shapes - 1.0) * np.log(deltas) - deltas))
