"""Synthetic meta-networks drawn from the generative model, and an exact
enumeration oracle for tiny instances.

Geography is hierarchical (zones > countries > sites). Each species holds a
range over that hierarchy and is present in a study when the study's site
falls inside its range and a per-study coin also lands heads.
"""

import csv
import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

from . import netdata
from .netdata import ObservedTensor, SpeciesIndex, StudyMeta, make_trait_table, write_matrix
from .pgrand import rng_stream

KIND_ORDER = ("zoocentric", "phytocentric", "network", "pair")


@dataclass
class SynthConfig:
    n_F: int = 40
    n_P: int = 60
    n_S: int = 50
    H_true: int = 3
    rho_true: tuple = (0.9, 0.9)
    lambda0_true: float = -3.5
    lambda_true: tuple = (2.0, 1.5, 1.0)
    det_intercept: tuple = (0.5, 0.5)  # animal, plant detection logit intercepts
    det_coef_sd: float = 0.3
    perfect_detection: bool = False
    n_clades: tuple = (5, 6)
    clade_corr: float = 0.8
    # per-side traits: continuous columns driven by factor loadings, plus pure noise columns
    n_traits: tuple = (3, 3)
    n_binary_traits: tuple = (1, 1)
    trait_effect: float = 1.0
    trait_noise_sd: float = 0.5
    kind_mix: tuple = (0.76, 0.08, 0.06, 0.10)
    single_focal_frac: float = 0.66
    max_focal: int = 6
    pairs_per_pair_study: int = 3
    n_zones: int = 3
    countries_per_zone: int = 3
    sites_per_country: int = 3
    missing_site_frac: float = 0.1
    # range inclusion rates: extra zone, country within zone, site within country, per-study presence
    occ_rates: tuple = (0.3, 0.5, 0.6, 0.9)
    force_all_present: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.n_F, self.n_P, self.n_S, self.H_true) < 1:
            raise ValueError("dimensions must be at least 1")
        mix = np.asarray(self.kind_mix, dtype=float)
        if len(mix) != 4 or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-8:
            raise ValueError("kind_mix must be 4 non-negative fractions summing to 1")
        rates = list(self.occ_rates) + [self.single_focal_frac, self.missing_site_frac]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")
        if len(self.lambda_true) != self.H_true:
            raise ValueError("lambda_true needs one weight per latent dimension")
        for r in self.rho_true:
            if not 0.0 <= r <= 1.0:
                raise ValueError("rho_true must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthTruth:
    L: np.ndarray
    O_F: np.ndarray
    O_P: np.ndarray
    p: np.ndarray
    q: np.ndarray
    U: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    focal_F: np.ndarray  # true focal masks (n_F x n_S), before any ingestion
    focal_P: np.ndarray
    extra: dict = field(default_factory=dict)


def block_corr(n, n_blocks, c):
    """Block-diagonal correlation: ``c`` within clades, 0 across, unit diagonal."""
    labels = np.arange(n) * n_blocks // n
    C = np.where(labels[:, None] == labels[None, :], c, 0.0)
    np.fill_diagonal(C, 1.0)
    return C


def allocate_kinds(n_S, mix):
    """Largest-remainder allocation so every kind with positive mass appears once n_S allows."""
    mix = np.asarray(mix, dtype=float)
    raw = mix * n_S
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts))[: n_S - counts.sum()]:
        counts[k] += 1
    # lift empty kinds that have positive mass, taking from the largest
    for k in np.flatnonzero((counts == 0) & (mix > 0)):
        big = int(np.argmax(counts))
        if counts[big] > 1:
            counts[big] -= 1
            counts[k] += 1
    return np.repeat(np.arange(4), counts)


def _mvn_columns(C, H, rho, rng):
    S = rho * C + (1.0 - rho) * np.eye(C.shape[0])
    chol = np.linalg.cholesky(S + 1e-12 * np.eye(C.shape[0]))
    return chol @ rng.standard_normal((C.shape[0], H))


def _geography(cfg, rng):
    zones = rng.integers(cfg.n_zones, size=cfg.n_S)
    countries = zones * cfg.countries_per_zone + rng.integers(cfg.countries_per_zone, size=cfg.n_S)
    sites = countries * cfg.sites_per_country + rng.integers(cfg.sites_per_country, size=cfg.n_S)
    missing = rng.random(cfg.n_S) < cfg.missing_site_frac
    return zones, countries, sites, missing


def _presence(n, cfg, zones, countries, sites, missing, rng):
    """Species x study presence from hierarchical ranges."""
    if cfg.force_all_present:
        return np.ones((n, cfg.n_S), dtype=bool)
    r_zone, r_country, r_site, r_study = cfg.occ_rates
    n_c = cfg.n_zones * cfg.countries_per_zone
    n_site = n_c * cfg.sites_per_country
    home = rng.integers(cfg.n_zones, size=n)
    zone_in = rng.random((n, cfg.n_zones)) < r_zone
    zone_in[np.arange(n), home] = True
    country_in = rng.random((n, n_c)) < r_country
    # every occupied zone holds at least one occupied country
    pick = rng.integers(cfg.countries_per_zone, size=(n, cfg.n_zones))
    country_in[np.arange(n)[:, None],
               np.arange(cfg.n_zones)[None, :] * cfg.countries_per_zone + pick] = True
    country_in &= np.repeat(zone_in, cfg.countries_per_zone, axis=1)
    site_in = rng.random((n, n_site)) < r_site
    pick = rng.integers(cfg.sites_per_country, size=(n, n_c))
    site_in[np.arange(n)[:, None], np.arange(n_c)[None, :] * cfg.sites_per_country + pick] = True
    site_in &= np.repeat(country_in, cfg.sites_per_country, axis=1)
    # studies without a site label still happen somewhere: use the drawn site
    in_range = site_in[:, sites]
    return in_range & (rng.random((n, cfg.n_S)) < r_study)


def _traits(Z, n_cols, n_bin, cfg, rng):
    n, H = Z.shape
    n_cont = n_cols - n_bin
    cols, kinds = [], []
    loadings = np.zeros((n_cols, H))
    for l in range(n_cols):
        # first column carries the planted factor signal, the rest are decoys
        if l == 0:
            loadings[l, 0] = cfg.trait_effect
        eta = Z @ loadings[l]
        if l < n_cont:
            cols.append(eta + cfg.trait_noise_sd * rng.standard_normal(n))
            kinds.append("continuous")
        else:
            cols.append((rng.random(n) < expit(eta)).astype(float))
            kinds.append("binary")
    vals = np.column_stack(cols) if cols else np.zeros((n, 0))
    return make_trait_table(vals, tuple(kinds), tuple(f"trait{k + 1}" for k in range(n_cols))), loadings


def generate(config=None, **overrides):
    """Draw a synthetic meta-network.

    Returns
    -------
    data : NetworkData
        Ingestion-ready bundle (focus derived from the records, default prior).
    truth : SynthTruth
    """
    cfg = config if config is not None else SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**cfg.to_dict(), **overrides})
    rng = rng_stream(cfg.seed, 0)
    n_F, n_P, n_S, H = cfg.n_F, cfg.n_P, cfg.n_S, cfg.H_true

    C_U = block_corr(n_F, cfg.n_clades[0], cfg.clade_corr)
    C_V = block_corr(n_P, cfg.n_clades[1], cfg.clade_corr)
    U = _mvn_columns(C_U, H, cfg.rho_true[0], rng)
    V = _mvn_columns(C_V, H, cfg.rho_true[1], rng)
    lam = np.asarray(cfg.lambda_true, dtype=float)
    theta = expit(cfg.lambda0_true + (U * lam) @ V.T)
    L = rng.random((n_F, n_P)) < theta

    if cfg.perfect_detection:
        p, q = np.ones(n_F), np.ones(n_P)
    else:
        p = expit(cfg.det_intercept[0] + U @ (cfg.det_coef_sd * rng.standard_normal(H)))
        q = expit(cfg.det_intercept[1] + V @ (cfg.det_coef_sd * rng.standard_normal(H)))

    zones, countries, sites, missing = _geography(cfg, rng)
    O_F = _presence(n_F, cfg, zones, countries, sites, missing, rng)
    O_P = _presence(n_P, cfg, zones, countries, sites, missing, rng)

    kinds = rng.permutation(allocate_kinds(n_S, cfg.kind_mix))
    focal_F = np.zeros((n_F, n_S), dtype=bool)
    focal_P = np.zeros((n_P, n_S), dtype=bool)
    pair_F = np.zeros((n_F, n_P, n_S), dtype=bool)
    for s, k in enumerate(kinds):
        kind = KIND_ORDER[k]
        if kind in ("zoocentric", "phytocentric"):
            O, focal, n = (O_F, focal_F, n_F) if kind == "zoocentric" else (O_P, focal_P, n_P)
            present = np.flatnonzero(O[:, s])
            if present.size == 0:
                # a study observes something
                present = rng.integers(n, size=1)
                O[present, s] = True
            size = 1 if rng.random() < cfg.single_focal_frac else rng.integers(2, cfg.max_focal + 1)
            chosen = rng.choice(present, size=min(size, present.size), replace=False)
            focal[chosen, s] = True
            (focal_P if kind == "zoocentric" else focal_F)[:, s] = True
        elif kind == "network":
            focal_F[:, s] = True
            focal_P[:, s] = True
        else:
            cand = np.argwhere(L & np.outer(O_F[:, s], O_P[:, s]))
            if cand.size == 0:
                cand = np.argwhere(L)
            if cand.size == 0:
                continue
            rows = cand[rng.choice(len(cand), size=min(cfg.pairs_per_pair_study, len(cand)),
                                   replace=False)]
            for i, j in rows:
                O_F[i, s] = O_P[j, s] = True
                pair_F[i, j, s] = True

    F = (focal_F[:, None, :] & focal_P[None, :, :]) | pair_F
    exposed = F & L[:, :, None] & O_F[:, None, :] & O_P[None, :, :]
    detect = rng.random(exposed.shape) < (p[:, None] * q[None, :])[:, :, None]
    A_dense = exposed & detect

    X, beta = _traits(U, cfg.n_traits[0], cfg.n_binary_traits[0], cfg, rng)
    W, gamma = _traits(V, cfg.n_traits[1], cfg.n_binary_traits[1], cfg, rng)

    index = SpeciesIndex(tuple(f"A{i:03d}" for i in range(n_F)),
                         tuple(f"P{j:03d}" for j in range(n_P)),
                         tuple(f"S{s:03d}" for s in range(n_S)))
    A = ObservedTensor.from_triples(np.argwhere(A_dense), index.dims)
    meta = [StudyMeta(index.study_ids[s], KIND_ORDER[kinds[s]],
                      None if missing[s] else f"site{sites[s]}",
                      f"country{countries[s]}", f"zone{zones[s]}") for s in range(n_S)]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = netdata.assemble(index, A, meta, X=X, W=W, C_U=C_U, C_V=C_V)
    truth = SynthTruth(L=L, O_F=O_F, O_P=O_P, p=p, q=q, U=U, V=V, theta=theta,
                       focal_F=focal_F, focal_P=focal_P,
                       extra=dict(beta=beta, gamma=gamma, A_dense=A_dense))
    return data, truth


# ------------------------------------------------------------ file output

def write_dataset(data, truth, outdir, config=None):
    """Write ingestable files plus truth matrices into ``outdir``."""
    import yaml

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    idx = data.index
    with (out / "interactions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["study_id", "animal_id", "plant_id"])
        # study-major order keeps study indices stable on re-ingestion
        for i, j, s in sorted(data.A.triples.tolist(), key=lambda t: (t[2], t[0], t[1])):
            w.writerow([idx.study_ids[s], idx.animal_ids[i], idx.plant_ids[j]])
    with (out / "studies.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["study_id", "kind", "site", "country", "zone"])
        for m in data.meta:
            w.writerow([m.study_id, m.kind, m.site or "", m.country, m.zone])
    for name, T, ids in (("animal_traits", data.X, idx.animal_ids),
                         ("plant_traits", data.W, idx.plant_ids)):
        with (out / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["species_id"] + list(T.labels))
            for sid, row in zip(ids, T.values):
                w.writerow([sid] + ["%.10g" % v for v in row])
    write_matrix(out / "animal_phylo.csv", data.phylo.C_U, idx.animal_ids, idx.animal_ids)
    write_matrix(out / "plant_phylo.csv", data.phylo.C_V, idx.plant_ids, idx.plant_ids)
    write_matrix(out / "truth_L.csv", truth.L.astype(int), idx.animal_ids, idx.plant_ids, "%d")
    write_matrix(out / "truth_O_F.csv", truth.O_F.astype(int), idx.animal_ids, idx.study_ids, "%d")
    write_matrix(out / "truth_O_P.csv", truth.O_P.astype(int), idx.plant_ids, idx.study_ids, "%d")
    run_cfg = {
        "data": {"interactions": "interactions.csv", "studies": "studies.csv",
                 "animal_traits": "animal_traits.csv", "plant_traits": "plant_traits.csv",
                 "animal_phylo": "animal_phylo.csv", "plant_phylo": "plant_phylo.csv"},
        "trait_kinds": {"animal": dict(zip(data.X.labels, data.X.kinds)),
                        "plant": dict(zip(data.W.labels, data.W.kinds))},
    }
    if config is not None:
        run_cfg["synth"] = {k: list(v) if isinstance(v, tuple) else v
                            for k, v in config.to_dict().items()}
    with (out / "config.yaml").open("w", encoding="utf-8") as fh:
        yaml.safe_dump(run_cfg, fh, sort_keys=False)
    return out


# ---------------------------------------------------------- exact oracle

MAX_ENUM_BITS = 12


def truncnorm_mean(center, sd=1.0):
    """Mean of ``N(center, sd^2)`` restricted to (0, 1)."""
    center = np.asarray(center, dtype=float)
    a, b = (0.0 - center) / sd, (1.0 - center) / sd
    return stats.truncnorm.mean(a, b, loc=center, scale=sd)


def exact_posterior_tiny(data, theta, p, q, pi_F, pi_P):
    """Exact posterior marginals of ``(L, O_F, O_P)`` by enumeration.

    Parameters
    ----------
    data : NetworkData
        At most 12 free binary variables in total.
    theta : (n_F, n_P) prior link probabilities.
    p, q : detection probabilities.
    pi_F, pi_P : prior occurrence probabilities per cell.

    Returns
    -------
    dict with ``L``, ``O_F``, ``O_P`` marginals and the log normalizer ``log_Z``.
    """
    n_F, n_P, n_S = data.dims
    n_bits = n_F * n_P + n_F * n_S + n_P * n_S
    if n_bits > MAX_ENUM_BITS:
        raise ValueError(f"{n_bits} binary variables exceed the enumeration limit {MAX_ENUM_BITS}")
    A = data.A.to_dense()
    F = data.focus.to_dense()
    pq = np.outer(p, q)[:, :, None]
    theta = np.asarray(theta, dtype=float)
    states = np.array(list(itertools.product((0, 1), repeat=n_bits)), dtype=bool)
    k1, k2 = n_F * n_P, n_F * n_P + n_F * n_S
    L = states[:, :k1].reshape(-1, n_F, n_P)
    OF = states[:, k1:k2].reshape(-1, n_F, n_S)
    OP = states[:, k2:].reshape(-1, n_P, n_S)

    with np.errstate(divide="ignore"):
        def bern(x, prob):
            prob = np.asarray(prob, dtype=float)
            return np.where(x, np.log(prob), np.log1p(-prob)).reshape(len(x), -1).sum(axis=1)

        logw = bern(L, theta) + bern(OF, pi_F) + bern(OP, pi_P)
        expo = L[:, :, :, None] & F[None] & OF[:, :, None, :] & OP[:, None, :, :]
        prob = np.where(expo, pq[None], 0.0)
        lik = np.where(A[None], np.log(prob), np.log1p(-prob))
    logw = logw + lik.reshape(len(states), -1).sum(axis=1)
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("data are inconsistent with every configuration")
    w = np.exp(logw - top)
    w /= w.sum()
    return {
        "L": np.tensordot(w, L, axes=1),
        "O_F": np.tensordot(w, OF, axes=1),
        "O_P": np.tensordot(w, OP, axes=1),
        "log_Z": float(top + np.log(np.exp(logw - top).sum())),
    }


def random_tiny_instance(seed, n_F=2, n_P=2, n_S=2, p_record=0.3):
    """Random tiny instance with network-kind studies for oracle checks.

    Returns the data bundle plus frozen parameters ``theta, p, q`` and prior
    centres drawn from the tier values.
    """
    rng = rng_stream(seed, 7)
    A_dense = rng.random((n_F, n_P, n_S)) < p_record
    index = SpeciesIndex(tuple(f"a{i}" for i in range(n_F)), tuple(f"p{j}" for j in range(n_P)),
                         tuple(f"s{s}" for s in range(n_S)))
    A = ObservedTensor.from_triples(np.argwhere(A_dense), index.dims)
    meta = [StudyMeta(f"s{s}", "network", f"site{s}", "c0", "z0") for s in range(n_S)]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = netdata.assemble(index, A, meta, tiers="expert")
    # every study is network-kind so empty studies still expose everything
    data.focus.animal_mask[:] = True
    data.focus.plant_mask[:] = True
    theta = rng.uniform(0.1, 0.9, size=(n_F, n_P))
    p = rng.uniform(0.2, 0.9, size=n_F)
    q = rng.uniform(0.2, 0.9, size=n_P)
    P_OF = np.where(A.animal_seen(), 1.0, rng.uniform(0.1, 0.9, size=(n_F, n_S)))
    P_OP = np.where(A.plant_seen(), 1.0, rng.uniform(0.1, 0.9, size=(n_P, n_S)))
    data = data.with_(prior=netdata.OccurrencePriorTable(P_OF, P_OP))
    return data, theta, p, q


def stack_instances(instances):
    """Place independent instances on the block diagonal of one dataset.

    Cross-block pairs are excluded from every study and cross-block cells are
    non-focal with prior 0, so a sampler on the stacked data factorises into
    independent kernels, one per instance.

    Parameters
    ----------
    instances : list of (NetworkData, theta, p, q)

    Returns
    -------
    data, theta, p, q, blocks
        ``blocks`` holds ``(animal_slice, plant_slice, study_slice)`` per instance.
    """
    dims = np.array([inst[0].dims for inst in instances])
    off = np.vstack([np.zeros(3, dtype=int), np.cumsum(dims, axis=0)])
    n_F, n_P, n_S = off[-1]
    triples, meta = [], []
    amask = np.zeros((n_F, n_S), dtype=bool)
    pmask = np.zeros((n_P, n_S), dtype=bool)
    excluded = np.ones((n_F, n_P), dtype=bool)
    theta = np.full((n_F, n_P), 0.5)
    p, q = np.empty(n_F), np.empty(n_P)
    P_OF, P_OP = np.zeros((n_F, n_S)), np.zeros((n_P, n_S))
    blocks = []
    for k, (d, th, pk, qk) in enumerate(instances):
        fi, pj, ss = (slice(off[k, a], off[k + 1, a]) for a in range(3))
        blocks.append((fi, pj, ss))
        triples.append(d.A.triples + off[k])
        meta.extend(StudyMeta(f"b{k}_{m.study_id}", m.kind, m.site and f"b{k}_{m.site}",
                              f"b{k}_{m.country}", f"b{k}_{m.zone}") for m in d.meta)
        amask[fi, ss] = d.focus.animal_mask
        pmask[pj, ss] = d.focus.plant_mask
        excluded[fi, pj] = d.focus.excluded
        theta[fi, pj] = th
        p[fi], q[pj] = pk, qk
        P_OF[fi, ss] = d.prior.P_OF
        P_OP[pj, ss] = d.prior.P_OP
    index = SpeciesIndex(tuple(f"a{i}" for i in range(n_F)), tuple(f"p{j}" for j in range(n_P)),
                         tuple(m.study_id for m in meta))
    A = ObservedTensor.from_triples(np.concatenate(triples), index.dims)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = netdata.assemble(index, A, meta)
    focus = netdata.FocusTensor(data.focus.kinds, amask, pmask, np.zeros((0, 3), dtype=np.int64),
                                excluded)
    data = data.with_(focus=focus, prior=netdata.OccurrencePriorTable(P_OF, P_OP))
    return data, theta, p, q, blocks
