"""Meta-network data model: ingestion, study focus, occurrence priors.

Studies come in four kinds. Which animal/plant pairs a study could have
recorded is fixed by its kind and by the species it actually reports, so the
focus array is stored factored (per-study focal masks plus explicit pair
triples) rather than as a dense ``n_F x n_P x n_S`` boolean cube.
"""

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STUDY_KINDS = ("zoocentric", "phytocentric", "network", "pair")
TIER_NAMES = ("same_study", "same_site", "same_country_only",
              "same_zone_only", "different_zone")

PRIOR_SCENARIOS = {
    "naive": (1.0, 0.0, 0.0, 0.0, 0.0),
    "default75": (1.0, 0.75, 0.75, 0.75, 0.75),
    "expert": (1.0, 0.75, 0.50, 0.25, 0.0),
}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid configuration (tier maps, column kinds, ...)."""


@dataclass(frozen=True)
class SpeciesIndex:
    animal_ids: tuple
    plant_ids: tuple
    study_ids: tuple

    def __post_init__(self):
        for name in ("animal_ids", "plant_ids", "study_ids"):
            labels = getattr(self, name)
            if len(set(labels)) != len(labels):
                raise DataError(f"duplicate labels in {name}")

    @property
    def dims(self):
        return len(self.animal_ids), len(self.plant_ids), len(self.study_ids)


@dataclass(frozen=True)
class ObservedTensor:
    """Binary interaction array stored as unique ``(i, j, s)`` triples."""

    triples: np.ndarray  # (n, 3) int64, sorted, unique
    dims: tuple

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or np.any(t.max(axis=0) >= np.asarray(self.dims))):
            raise DataError("interaction triple out of range")
        t = np.unique(t, axis=0)
        object.__setattr__(self, "triples", t)

    @classmethod
    def from_triples(cls, triples, dims):
        return cls(np.asarray(triples, dtype=np.int64).reshape(-1, 3), tuple(dims))

    @property
    def i(self):
        return self.triples[:, 0]

    @property
    def j(self):
        return self.triples[:, 1]

    @property
    def s(self):
        return self.triples[:, 2]

    def __len__(self):
        return len(self.triples)

    def to_dense(self):
        a = np.zeros(self.dims, dtype=bool)
        a[self.i, self.j, self.s] = True
        return a

    def pair_counts(self):
        """Number of studies recording each pair, ``n_F x n_P`` ints."""
        out = np.zeros(self.dims[:2], dtype=np.int64)
        np.add.at(out, (self.i, self.j), 1)
        return out

    def animal_seen(self):
        out = np.zeros((self.dims[0], self.dims[2]), dtype=bool)
        out[self.i, self.s] = True
        return out

    def plant_seen(self):
        out = np.zeros((self.dims[1], self.dims[2]), dtype=bool)
        out[self.j, self.s] = True
        return out


@dataclass(frozen=True)
class StudyMeta:
    study_id: str
    kind: str
    site: str | None
    country: str
    zone: str

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise DataError(f"study {self.study_id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class FocusTensor:
    """Factored focus array.

    ``F[i, j, s] = (animal_mask[i, s] & plant_mask[j, s] | (i, j, s) in
    pair_triples) & ~excluded[i, j]``.
    """

    kinds: tuple
    animal_mask: np.ndarray  # n_F x n_S bool
    plant_mask: np.ndarray  # n_P x n_S bool
    pair_triples: np.ndarray  # (k, 3) int64
    excluded: np.ndarray  # n_F x n_P bool, pairs removed from every study

    @property
    def dims(self):
        return (self.animal_mask.shape[0], self.plant_mask.shape[0],
                self.animal_mask.shape[1])

    def to_dense(self):
        f = self.animal_mask[:, None, :] & self.plant_mask[None, :, :]
        p = self.pair_triples
        f[p[:, 0], p[:, 1], p[:, 2]] = True
        f &= ~self.excluded[:, :, None]
        return f

    def focal_animals(self, s):
        return set(np.flatnonzero(self.animal_mask[:, s]).tolist())

    def focal_plants(self, s):
        return set(np.flatnonzero(self.plant_mask[:, s]).tolist())


@dataclass(frozen=True)
class TraitTable:
    values: np.ndarray  # n x p float
    kinds: tuple  # "continuous" | "binary" per column
    labels: tuple

    @property
    def n_cols(self):
        return self.values.shape[1]

    def continuous_cols(self):
        return [k for k, kind in enumerate(self.kinds) if kind == "continuous"]

    def binary_cols(self):
        return [k for k, kind in enumerate(self.kinds) if kind == "binary"]


def empty_traits(n):
    return TraitTable(np.zeros((n, 0)), (), ())


@dataclass(frozen=True)
class PhyloCorrelation:
    C_U: np.ndarray
    C_V: np.ndarray


@dataclass(frozen=True)
class OccurrencePriorTable:
    P_OF: np.ndarray  # n_F x n_S
    P_OP: np.ndarray  # n_P x n_S


@dataclass
class NetworkData:
    """Everything a fit needs, already indexed."""

    index: SpeciesIndex
    A: ObservedTensor
    meta: list
    focus: FocusTensor
    X: TraitTable
    W: TraitTable
    phylo: PhyloCorrelation
    prior: OccurrencePriorTable
    extra: dict = field(default_factory=dict)

    @property
    def dims(self):
        return self.A.dims

    def with_(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------- ingestion

def _read_rows(path, required):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty input")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = [{k: (v or "").strip() for k, v in row.items()} for row in reader]
    if not rows:
        raise DataError(f"{path}: empty input")
    return rows


def parse_studies(rows):
    meta = {}
    for row in rows:
        sid = row["study_id"]
        kind = row["kind"].lower()
        if kind not in STUDY_KINDS:
            raise DataError(f"study {sid!r}: cannot parse kind {row['kind']!r}")
        meta[sid] = StudyMeta(sid, kind, row.get("site") or None,
                              row.get("country", ""), row.get("zone", ""))
    return meta


def ingest_records(interactions_file, studies_file, animal_ids=None, plant_ids=None):
    """Read interaction and study tables.

    Indices are assigned in first-appearance order; ``animal_ids`` /
    ``plant_ids`` may pre-seed the species lists (e.g. from trait files) so
    species without any interaction still get an index.

    Returns
    -------
    (SpeciesIndex, ObservedTensor, list of StudyMeta)
    """
    inter = _read_rows(interactions_file, ("study_id", "animal_id", "plant_id"))
    study_rows = _read_rows(studies_file, ("study_id", "kind", "site", "country", "zone"))
    meta_by_id = parse_studies(study_rows)

    animals = {a: k for k, a in enumerate(animal_ids or [])}
    plants = {p: k for k, p in enumerate(plant_ids or [])}
    studies = {}
    triples = []
    for row in inter:
        sid = row["study_id"]
        if sid not in meta_by_id:
            raise DataError(f"study {sid!r} has no metadata in {studies_file}")
        i = animals.setdefault(row["animal_id"], len(animals))
        j = plants.setdefault(row["plant_id"], len(plants))
        s = studies.setdefault(sid, len(studies))
        triples.append((i, j, s))
    # studies with metadata but no records still exist (empty focus)
    for sid in meta_by_id:
        studies.setdefault(sid, len(studies))

    index = SpeciesIndex(tuple(animals), tuple(plants), tuple(studies))
    A = ObservedTensor.from_triples(triples, index.dims)
    meta = [meta_by_id[sid] for sid in index.study_ids]
    logger.info("ingested %d records -> %d triples, %d pairs, dims %s",
                len(inter), len(A), int((A.pair_counts() > 0).sum()), index.dims)
    return index, A, meta


def read_traits(path, species_ids, kinds):
    """Read a ``species_id,<trait>...`` table aligned to ``species_ids``.

    ``kinds`` maps column label to ``"continuous"`` or ``"binary"``; columns
    absent from the map default to continuous. Continuous columns are
    standardised to mean 0 / unit variance.
    """
    rows = _read_rows(path, ("species_id",))
    labels = [c for c in rows[0] if c != "species_id"]
    by_id = {r["species_id"]: r for r in rows}
    missing = [s for s in species_ids if s not in by_id]
    if missing:
        raise DataError(f"{path}: no trait row for {missing[:5]}")
    vals = np.empty((len(species_ids), len(labels)))
    for r, sid in enumerate(species_ids):
        for c, lab in enumerate(labels):
            cell = by_id[sid][lab]
            if cell == "":
                raise DataError(f"{path}: missing value for {sid!r}, {lab!r}")
            vals[r, c] = float(cell)
    col_kinds = tuple((kinds or {}).get(lab, "continuous") for lab in labels)
    return make_trait_table(vals, col_kinds, labels)


def make_trait_table(values, kinds, labels=None):
    values = np.array(values, dtype=float, copy=True)
    if values.ndim != 2:
        raise DataError("trait matrix must be 2-d")
    labels = tuple(labels) if labels is not None else tuple(f"t{k}" for k in range(values.shape[1]))
    for k, kind in enumerate(kinds):
        if kind == "continuous":
            col = values[:, k]
            sd = col.std()
            values[:, k] = (col - col.mean()) / (sd if sd > 0 else 1.0)
        elif kind == "binary":
            if not np.all(np.isin(values[:, k], (0.0, 1.0))):
                raise DataError(f"binary trait {labels[k]!r} has values outside {{0,1}}")
        else:
            raise ConfigError(f"unknown trait kind {kind!r}")
    return TraitTable(values, tuple(kinds), labels)


def read_phylo(path, species_ids):
    """Read a labelled square correlation matrix and reorder to ``species_ids``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty input")
    col_labels = [c.strip() for c in rows[0][1:]]
    row_labels = [r[0].strip() for r in rows[1:]]
    if col_labels != row_labels:
        raise DataError(f"{path}: row and column labels differ")
    if set(col_labels) != set(species_ids):
        raise DataError(f"{path}: label set does not match species index")
    mat = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    pos = {lab: k for k, lab in enumerate(col_labels)}
    order = [pos[s] for s in species_ids]
    return mat[np.ix_(order, order)]


def write_matrix(path, mat, row_labels, col_labels, fmt="%.6g"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(col_labels))
        for lab, row in zip(row_labels, np.asarray(mat)):
            w.writerow([lab] + [fmt % v for v in row])


def read_matrix(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labs = [r[0] for r in rows[1:]]
    mat = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return mat, labs, cols


# ------------------------------------------------------------------- focus

def derive_focus(A, meta):
    """Study focus from study kind and the recorded interactions.

    Zoocentric studies focus on the animals they record (any plant partner
    would have been recorded), phytocentric symmetrically, network studies
    on everything and pair studies on exactly the recorded pairs.
    """
    n_F, n_P, n_S = A.dims
    if len(meta) != n_S:
        raise DataError(f"{len(meta)} study records for {n_S} studies")
    animal_seen = A.animal_seen()
    plant_seen = A.plant_seen()
    amask = np.zeros((n_F, n_S), dtype=bool)
    pmask = np.zeros((n_P, n_S), dtype=bool)
    pair_rows = []
    for s, m in enumerate(meta):
        if not animal_seen[:, s].any():
            warnings.warn(f"study {m.study_id!r} has no recorded interactions; "
                          "its focal set is empty", stacklevel=2)
            continue
        if m.kind == "zoocentric":
            amask[:, s] = animal_seen[:, s]
            pmask[:, s] = True
        elif m.kind == "phytocentric":
            amask[:, s] = True
            pmask[:, s] = plant_seen[:, s]
        elif m.kind == "network":
            amask[:, s] = True
            pmask[:, s] = True
        else:
            pair_rows.append(A.triples[A.s == s])
    pairs = np.concatenate(pair_rows) if pair_rows else np.zeros((0, 3), dtype=np.int64)
    return FocusTensor(tuple(m.kind for m in meta), amask, pmask,
                       pairs.astype(np.int64), np.zeros((n_F, n_P), dtype=bool))


# ------------------------------------------------------- occurrence priors

def _label_match(labels):
    # equal and present; missing labels never match another study
    labels = np.asarray([lab if lab else None for lab in labels], dtype=object)
    present = np.array([lab is not None for lab in labels])
    eq = labels[:, None] == labels[None, :]
    return eq & present[:, None] & present[None, :]


def study_proximity(meta):
    """Per study pair, the closest shared level: 1 site, 2 country, 3 zone, 4 none."""
    site = _label_match([m.site for m in meta])
    country = _label_match([m.country for m in meta])
    zone = _label_match([m.zone for m in meta])
    level = np.full(site.shape, 4, dtype=np.int64)
    level[zone] = 3
    level[country] = 2
    level[site] = 1
    return level


def occurrence_tiers(seen, meta):
    """Tier index (0..4, see ``TIER_NAMES``) for every species-study cell.

    ``seen`` is a species x study boolean of recorded presence.
    """
    seen = np.asarray(seen, dtype=bool)
    level = study_proximity(meta)
    tiers = np.full(seen.shape, 4, dtype=np.int64)
    seen_f = seen.astype(np.float64)
    for lev in (3, 2, 1):
        near = seen_f @ (level == lev).astype(np.float64) > 0
        tiers[near] = lev
    tiers[seen] = 0
    return tiers


def check_tiers(tiers):
    if isinstance(tiers, str):
        if tiers not in PRIOR_SCENARIOS:
            raise ConfigError(f"unknown prior scenario {tiers!r}")
        tiers = PRIOR_SCENARIOS[tiers]
    if isinstance(tiers, dict):
        try:
            tiers = tuple(float(tiers[k]) for k in TIER_NAMES)
        except KeyError as exc:
            raise ConfigError(f"tier map lacks {exc.args[0]!r}") from None
    tiers = tuple(float(t) for t in tiers)
    if len(tiers) != len(TIER_NAMES):
        raise ConfigError(f"expected {len(TIER_NAMES)} tier probabilities")
    if any(not 0.0 <= t <= 1.0 for t in tiers):
        raise ConfigError("tier probabilities must lie in [0, 1]")
    if any(b > a for a, b in zip(tiers, tiers[1:])):
        raise ConfigError(f"tier probabilities must be non-increasing: {tiers}")
    return tiers


def build_occurrence_prior(A, meta, tiers):
    """Prior occurrence probabilities from proximity to recorded presence.

    A species recorded in study ``s`` gets 1; otherwise it gets the tier
    probability of the closest study (same site, then country, then zone)
    where it was recorded.
    """
    tiers = np.asarray(check_tiers(tiers))
    P_OF = tiers[occurrence_tiers(A.animal_seen(), meta)]
    P_OP = tiers[occurrence_tiers(A.plant_seen(), meta)]
    P_OF[A.animal_seen()] = 1.0
    P_OP[A.plant_seen()] = 1.0
    return OccurrencePriorTable(P_OF, P_OP)


# --------------------------------------------------------------- validation

def _check_corr(name, C, n, report):
    C = np.asarray(C, dtype=float)
    if C.shape != (n, n):
        report.append(f"{name}: shape {C.shape} != {(n, n)}")
        return
    if not np.allclose(C, C.T, atol=1e-10):
        report.append(f"{name}: not symmetric")
    bad = np.flatnonzero(np.abs(np.diag(C) - 1.0) > 1e-10)
    if bad.size:
        report.append(f"{name}: unit diagonal violated at rows {bad[:10].tolist()}")
    lam = np.linalg.eigvalsh((C + C.T) / 2)
    if lam.min() < -1e-8:
        report.append(f"{name}: not positive semidefinite (min eigenvalue {lam.min():.3g})")


def validate_inputs(data):
    """Check the data invariants; returns a list of violation strings (empty = clean)."""
    report = []
    n_F, n_P, n_S = data.dims
    if data.index.dims != data.dims:
        report.append(f"index dims {data.index.dims} != tensor dims {data.dims}")
    if len(data.meta) != n_S:
        report.append(f"{len(data.meta)} study records for {n_S} studies")
    for m in data.meta:
        if m.kind not in STUDY_KINDS:
            report.append(f"study {m.study_id!r}: kind {m.kind!r}")
    A = data.A
    if len(A):
        F = data.focus.to_dense()
        unfocused = ~F[A.i, A.j, A.s]
        for i, j, s in A.triples[unfocused][:10]:
            report.append(f"observed triple ({i},{j},{s}) lies outside the study focus")
    P_OF, P_OP = data.prior.P_OF, data.prior.P_OP
    if P_OF.shape != (n_F, n_S) or P_OP.shape != (n_P, n_S):
        report.append("occurrence prior shapes do not match dims")
    else:
        for name, P, seen in (("P_OF", P_OF, A.animal_seen()), ("P_OP", P_OP, A.plant_seen())):
            if np.any((P < 0) | (P > 1) | ~np.isfinite(P)):
                report.append(f"{name}: entries outside [0, 1]")
            for r, s in np.argwhere(seen & (P < 1.0))[:10]:
                report.append(f"{name}[{r},{s}]={P[r, s]:.3g}: observed species must have prior 1")
    _check_corr("C_U", data.phylo.C_U, n_F, report)
    _check_corr("C_V", data.phylo.C_V, n_P, report)
    for name, T, n in (("X", data.X, n_F), ("W", data.W, n_P)):
        if T.values.shape[0] != n:
            report.append(f"{name}: {T.values.shape[0]} rows for {n} species")
            continue
        if not np.all(np.isfinite(T.values)):
            report.append(f"{name}: missing or non-finite cells")
        for k, kind in enumerate(T.kinds):
            col = T.values[:, k]
            if kind == "binary" and not np.all(np.isin(col, (0.0, 1.0))):
                report.append(f"{name}[{T.labels[k]}]: binary column outside {{0,1}}")
            elif kind == "continuous" and (abs(col.mean()) > 1e-6 or abs(col.std() - 1) > 1e-6):
                if col.std() > 0:
                    report.append(f"{name}[{T.labels[k]}]: continuous column not standardised")
    return report


# ------------------------------------------------------------------ loading

def assemble(index, A, meta, *, X=None, W=None, C_U=None, C_V=None, tiers="default75"):
    """Build a ``NetworkData`` from in-memory pieces (identity phylogeny and
    no traits unless given)."""
    n_F, n_P, _ = index.dims
    focus = derive_focus(A, meta)
    return NetworkData(
        index=index, A=A, meta=list(meta), focus=focus,
        X=X if X is not None else empty_traits(n_F),
        W=W if W is not None else empty_traits(n_P),
        phylo=PhyloCorrelation(np.eye(n_F) if C_U is None else np.asarray(C_U, float),
                               np.eye(n_P) if C_V is None else np.asarray(C_V, float)),
        prior=build_occurrence_prior(A, meta, tiers),
        extra={"tiers": check_tiers(tiers)},
    )


def with_prior(data, tiers):
    """Copy of ``data`` with the occurrence prior rebuilt for ``tiers``."""
    tiers = check_tiers(tiers)
    return data.with_(prior=build_occurrence_prior(data.A, data.meta, tiers),
                      extra={**data.extra, "tiers": tiers})


def _labels_of(phylo_path, traits_path):
    if phylo_path is not None:
        with Path(phylo_path).open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
        return [c.strip() for c in header[1:]] if header else None
    if traits_path is not None:
        return [r["species_id"] for r in _read_rows(traits_path, ("species_id",))]
    return None


def load_dataset(paths, trait_kinds=None, tiers="default75", base_dir=None):
    """Load a dataset from a mapping of file roles to paths.

    Roles: ``interactions``, ``studies`` (required); ``animal_traits``,
    ``plant_traits``, ``animal_phylo``, ``plant_phylo`` (optional).
    """
    base = Path(base_dir) if base_dir else Path(".")

    def p(role):
        v = paths.get(role)
        return None if not v else base / v

    trait_kinds = trait_kinds or {}
    # species lists are seeded from the side files so species without any
    # record keep their row in the trait and phylogeny matrices
    animal_ids = _labels_of(p("animal_phylo"), p("animal_traits"))
    plant_ids = _labels_of(p("plant_phylo"), p("plant_traits"))
    index, A, meta = ingest_records(p("interactions"), p("studies"), animal_ids, plant_ids)
    X = (read_traits(p("animal_traits"), index.animal_ids, trait_kinds.get("animal"))
         if p("animal_traits") else None)
    W = (read_traits(p("plant_traits"), index.plant_ids, trait_kinds.get("plant"))
         if p("plant_traits") else None)
    C_U = read_phylo(p("animal_phylo"), index.animal_ids) if p("animal_phylo") else None
    C_V = read_phylo(p("plant_phylo"), index.plant_ids) if p("plant_phylo") else None
    return assemble(index, A, meta, X=X, W=W, C_U=C_U, C_V=C_V, tiers=tiers)
