"""Command-line front end: ``biplink <fit|cv|traits|summarize|simulate|validate>``.

Settings come from an optional YAML config file; command-line flags override
it. Exit codes: 0 success, 2 validation or configuration error, 3 numeric
failure.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, evalx, gibbs, netdata, posterior, synth
from .model import Hyperparams

logger = logging.getLogger("biplink")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "variant": "COIL_PLUS",
    "prior": "default75",
    "chain": {"iters": 20000, "burnin": 10000, "thin": 0.05, "chains": 4, "seed": 0,
              "H": 10, "checkpoint_every": 1000},
    "thresholds": [0.5, 0.75],
    "cv": {"replicates": 10, "pairs": 100},
    "traits": {"B": 100},
}


class UsageError(Exception):
    """Bad configuration detected by the front end."""


# ---------------------------------------------------------------- config

def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_variant(text):
    t = str(text).strip().lower().replace("_", "").replace("+", "plus")
    if t == "coil":
        return "COIL"
    if t == "coilplus":
        return "COIL_PLUS"
    raise UsageError(f"unknown variant {text!r} (expected coil or coilplus)")


def parse_prior(spec, base_dir=Path(".")):
    """Scenario name, ``file:<path>`` (YAML tier map) or an explicit map/list."""
    if isinstance(spec, (dict, list, tuple)):
        return netdata.check_tiers(spec)
    spec = str(spec)
    aliases = {"naive_0_100": "naive", "default_75": "default75", "0/100": "naive"}
    spec = aliases.get(spec, spec)
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise UsageError(f"prior file {path} does not exist")
        with path.open(encoding="utf-8") as fh:
            return netdata.check_tiers(yaml.safe_load(fh))
    return netdata.check_tiers(spec)


def load_config(args):
    cfg = dict(DEFAULTS)
    base_dir = Path(".")
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        with path.open(encoding="utf-8") as fh:
            cfg = _merge(cfg, yaml.safe_load(fh) or {})
        base_dir = path.parent
    chain = dict(cfg["chain"])
    for flag, key in (("iters", "iters"), ("burnin", "burnin"), ("thin", "thin"),
                      ("chains", "chains"), ("seed", "seed"), ("H", "H"),
                      ("checkpoint_every", "checkpoint_every")):
        v = getattr(args, flag, None)
        if v is not None:
            chain[key] = v
    cfg["chain"] = chain
    if getattr(args, "variant", None):
        cfg["variant"] = args.variant
    if getattr(args, "prior", None):
        cfg["prior"] = args.prior
    if getattr(args, "threshold", None):
        cfg["thresholds"] = [float(t) for t in args.threshold]
    if getattr(args, "replicates", None) is not None:
        cfg["cv"] = {**cfg["cv"], "replicates": args.replicates}
    if getattr(args, "pairs", None) is not None:
        cfg["cv"] = {**cfg["cv"], "pairs": args.pairs}
    if getattr(args, "B", None) is not None:
        cfg["traits"] = {**cfg["traits"], "B": args.B}
    if getattr(args, "data", None):
        cfg["data_dir"] = args.data
    cfg["variant"] = parse_variant(cfg["variant"])
    cfg["_base_dir"] = str(base_dir)
    for t in cfg["thresholds"]:
        if not 0 < float(t) < 1:
            raise UsageError(f"threshold {t} outside (0, 1)")
    return cfg


def chain_config(cfg):
    c = cfg["chain"]
    try:
        return gibbs.ChainConfig(n_iter=int(c["iters"]), n_burn=int(c["burnin"]),
                                 thin_keep_fraction=float(c["thin"]), n_chains=int(c["chains"]),
                                 seed=int(c["seed"]), sampler_variant=cfg["variant"],
                                 hyperparams=Hyperparams(H=int(c["H"])),
                                 checkpoint_every=int(c.get("checkpoint_every") or 0))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def config_hash(cfg):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def output_dir(args, cfg, command):
    out = getattr(args, "out", None) or cfg.get("out")
    if not out:
        root = os.environ.get("BIPLINK_OUT", "biplink_out")
        out = Path(root) / command
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, command, cfg):
    manifest = {"command": command, "config_hash": config_hash(cfg),
                "seed": cfg.get("chain", {}).get("seed"), "version": __version__}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_data(cfg, prior=True):
    base = Path(cfg["_base_dir"])
    paths = cfg.get("data")
    if cfg.get("data_dir"):
        base = Path(cfg["data_dir"])
        inner = base / "config.yaml"
        if paths is None and inner.exists():
            with inner.open(encoding="utf-8") as fh:
                sub = yaml.safe_load(fh) or {}
            paths = sub.get("data")
            cfg.setdefault("trait_kinds", sub.get("trait_kinds"))
        if paths is None:
            paths = {"interactions": "interactions.csv", "studies": "studies.csv"}
    if not paths:
        raise UsageError("no input data: give --config with a data section or --data DIR")
    for role, p in paths.items():
        if p and not (base / p).exists():
            raise UsageError(f"{role} file {base / p} does not exist")
    tiers = parse_prior(cfg["prior"], base) if prior else "default75"
    import warnings
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = netdata.load_dataset(paths, cfg.get("trait_kinds"), tiers=tiers, base_dir=base)
    for w in caught:
        logger.warning("%s", w.message)
    return data


def _check_data(data):
    report = netdata.validate_inputs(data)
    if report:
        raise netdata.DataError("validation failed:\n  " + "\n  ".join(report))


# -------------------------------------------------------------- outputs

def write_fit_artifacts(out, data, outputs, summary, cfg):
    idx = data.index
    netdata.write_matrix(out / "mean_prob.csv", summary.mean_prob, idx.animal_ids, idx.plant_ids)
    with (out / "tier_table.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "tier", outputs[0].variant])
        for side in ("animal", "plant"):
            for tier, v in summary.occ_tier_table[side].items():
                w.writerow([side, tier, "%.6g" % v])
    with (out / "loglik_traces.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"chain{o.chain_id}" for o in outputs])
        for row in np.column_stack([o.loglik_trace for o in outputs]):
            w.writerow(["%.10g" % v for v in row])
    np.savez_compressed(
        out / "prob_samples.npz",
        prob_samples=np.stack([o.prob_samples for o in outputs]),
        loglik=np.stack([o.loglik_trace for o in outputs]),
        retained_iters=outputs[0].retained_iters,
        observed=data.A.pair_counts() > 0,
        animal_ids=np.array(idx.animal_ids), plant_ids=np.array(idx.plant_ids))
    acc = summary.acceptance
    diag = {
        "variant": outputs[0].variant,
        "rhat_loglik": summary.rhat,
        "n_samples": summary.n_samples,
        "new_link_counts": {str(k): v for k, v in summary.new_link_counts.items()},
        "prevalence": {str(k): v for k, v in summary.prevalence.items()},
        "observed_prevalence": summary.observed_prevalence,
        "occurrence_flips": acc.get("flips", 0),
        "acceptance_rate": _ratio(acc.get("accepted_F", 0) + acc.get("accepted_P", 0),
                                  acc.get("proposed_F", 0) + acc.get("proposed_P", 0)),
        "switch_acceptance_rate": _ratio(
            acc.get("switch_accepted_F", 0) + acc.get("switch_accepted_P", 0),
            acc.get("switch_proposed_F", 0) + acc.get("switch_proposed_P", 0)),
        "rho_U_mode": _mode(np.concatenate([o.rho_U_trace[o.retained_iters] for o in outputs])),
        "rho_V_mode": _mode(np.concatenate([o.rho_V_trace[o.retained_iters] for o in outputs])),
    }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    return diag


def _ratio(a, b):
    return a / b if b else None


def _mode(values):
    if values.size == 0:
        return None
    vals, counts = np.unique(values, return_counts=True)
    return float(vals[np.argmax(counts)])


def fit_once(data, cfg, out=None, resume=False, jobs=None):
    ccfg = chain_config(cfg)
    ck_dir = None
    if out is not None and ccfg.checkpoint_every:
        ck_dir = out / "checkpoints"
        if ck_dir.exists() and not resume:
            shutil.rmtree(ck_dir)
        ck_dir.mkdir(parents=True, exist_ok=True)
    outputs = gibbs.run_chains(data, ccfg, n_jobs=jobs or ccfg.n_chains, checkpoint_dir=ck_dir)
    summary = posterior.summarize(outputs, data.A, thresholds=cfg["thresholds"], data=data)
    return outputs, summary


# -------------------------------------------------------------- commands

def cmd_validate(args):
    cfg = load_config(args)
    data = load_data(cfg)
    report = netdata.validate_inputs(data)
    if report:
        print("validation failed:")
        for line in report:
            print("  " + line)
        return EXIT_INVALID
    n_F, n_P, n_S = data.dims
    print(f"ok: {n_F} animals, {n_P} plants, {n_S} studies, {len(data.A)} records")
    return EXIT_OK


def cmd_fit(args):
    cfg = load_config(args)
    data = load_data(cfg)
    _check_data(data)
    out = output_dir(args, cfg, "fit")
    write_manifest(out, "fit", cfg)
    outputs, summary = fit_once(data, cfg, out, resume=args.resume, jobs=args.jobs)
    diag = write_fit_artifacts(out, data, outputs, summary, cfg)
    print(f"R-hat (log-likelihood): {diag['rhat_loglik']:.4f}")
    if diag["acceptance_rate"] is not None:
        print(f"occurrence acceptance: {diag['acceptance_rate']:.3f} "
              f"(switch moves {diag['switch_acceptance_rate']:.3f})")
    print(f"occurrence flips: {diag['occurrence_flips']}")
    for t, n in summary.new_link_counts.items():
        print(f"new links above {t:g}: {n}; prevalence {summary.prevalence[t]:.4f}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_cv(args):
    cfg = load_config(args)
    data = load_data(cfg)
    _check_data(data)
    out = output_dir(args, cfg, "cv")
    write_manifest(out, "cv", cfg)
    tiers = parse_prior(cfg["prior"], Path(cfg["_base_dir"]))
    n_rep, n_pairs = int(cfg["cv"]["replicates"]), int(cfg["cv"]["pairs"])
    seed = int(cfg["chain"]["seed"])
    ts = cfg["thresholds"]
    rows = []
    for rep in range(n_rep):
        try:
            held, spec = evalx.make_holdout(data, n_pairs, seed=seed, replicate_id=rep, tiers=tiers)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        rep_cfg = _merge(cfg, {"chain": {"seed": seed + rep, "checkpoint_every": 0}})
        outputs, summary = fit_once(held, rep_cfg, None, jobs=args.jobs)
        mp = summary.mean_prob
        row = {"replicate": rep, "variant": cfg["variant"],
               "pseudo_precision": evalx.pseudo_precision(mp, spec)}
        for t in ts:
            row[f"recall_{int(round(t * 100))}"] = evalx.recall_at(mp, spec, t)
        row["upper_bound"] = evalx.admissible_interval(mp)[1]
        rows.append(row)
        print(f"replicate {rep}: pseudo-precision {row['pseudo_precision']:.3f}")
    cols = list(rows[0])
    with (out / "cv_report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    agg = {}
    for c in cols[2:]:
        vals = np.array([r[c] for r in rows])
        agg[c] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    (out / "cv_summary.json").write_text(json.dumps(agg, indent=2) + "\n")
    for c, v in agg.items():
        print(f"{c}: {v['mean']:.4f} +/- {v['sd']:.4f}")
    return EXIT_OK


def _load_fit(fit_dir):
    path = Path(fit_dir) / "prob_samples.npz"
    if not path.exists():
        raise UsageError(f"fit artifacts missing: {path} not found")
    return np.load(path)


def cmd_traits(args):
    cfg = load_config(args)
    if not args.fit_dir:
        raise UsageError("traits needs --fit-dir pointing at fit artifacts")
    arts = _load_fit(args.fit_dir)
    data = load_data(cfg)
    out = output_dir(args, cfg, "traits")
    write_manifest(out, "traits", cfg)
    probs = arts["prob_samples"]
    probs = probs.reshape(-1, *probs.shape[2:])
    if probs.shape[1:] != data.dims[:2]:
        raise UsageError("fit artifacts do not match the dataset dimensions")
    B = int(cfg["traits"]["B"])
    seed = int(cfg["chain"]["seed"])
    vi_rows, corr_rows = [], []
    for side, T, partners in (("animal", data.X, data.index.plant_ids),
                              ("plant", data.W, data.index.animal_ids)):
        logits = evalx.logit_samples(probs, side)
        for k, label in enumerate(T.labels):
            col = T.values[:, k]
            try:
                vi, det = evalx.variable_importance(col, logits, B=B, seed=seed,
                                                    return_details=True)
                corr = evalx.signed_trait_correlations(col, logits)
            except ValueError as exc:
                vi_rows.append([side, label, "", f"error: {exc}"])
                continue
            vi_rows.append([side, label, "%.6g" % vi, f"skipped {det['n_skipped']}"])
            corr_rows.extend([side, label, pid, "%.6g" % c] for pid, c in zip(partners, corr))
    vi_rows.sort(key=lambda r: (r[0], -(float(r[2]) if r[2] else -1.0)))
    with (out / "varimp.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "trait", "varimp", "note"])
        w.writerows(vi_rows)
    with (out / "trait_correlations.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "trait", "partner_species", "mean_corr"])
        w.writerows(corr_rows)
    for r in vi_rows:
        print(",".join(r))
    return EXIT_OK


def cmd_summarize(args):
    cfg = load_config(args)
    if not args.fit_dir:
        raise UsageError("summarize needs --fit-dir pointing at fit artifacts")
    arts = _load_fit(args.fit_dir)
    probs = arts["prob_samples"]
    observed = arts["observed"]
    mean_prob = probs.reshape(-1, *probs.shape[2:]).astype(np.float64).mean(axis=0)
    mean_prob[observed] = 1.0
    res = {"rhat_loglik": None, "thresholds": {}}
    ll = arts["loglik"]
    start = int(arts["retained_iters"][0]) if arts["retained_iters"].size else 0
    if ll.shape[0] >= 2 and ll.shape[1] - start >= 10:
        res["rhat_loglik"] = posterior.gelman_rubin(ll[:, start:])
    for t in cfg["thresholds"]:
        res["thresholds"][str(t)] = {
            "new_links": int(np.sum((mean_prob > t) & ~observed)),
            "prevalence": float(np.mean(mean_prob > t))}
    out = output_dir(args, cfg, "summarize")
    write_manifest(out, "summarize", cfg)
    netdata.write_matrix(out / "mean_prob.csv", mean_prob, arts["animal_ids"], arts["plant_ids"])
    (out / "summary.json").write_text(json.dumps(res, indent=2) + "\n")
    print(json.dumps(res, indent=2))
    return EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args)
    over = dict(cfg.get("synth") or {})
    if args.seed is not None:
        over["seed"] = args.seed
    if args.perfect_detection:
        over["perfect_detection"] = True
    try:
        scfg = synth.SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in over.items()})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synth config: {exc}") from exc
    data, truth = synth.generate(scfg)
    out = output_dir(args, cfg, "simulate")
    synth.write_dataset(data, truth, out, scfg)
    write_manifest(out, "simulate", {**cfg, "synth": scfg.to_dict(), "chain": {"seed": scfg.seed}})
    print(f"simulated {data.dims} with {len(data.A)} records into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="biplink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, chain=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--data", help="dataset directory (uses its config.yaml if present)")
        sp.add_argument("--out", help="output directory (default $BIPLINK_OUT/<command>)")
        sp.add_argument("--prior", help="naive|default75|expert|file:<path>")
        sp.add_argument("--threshold", action="append", type=float,
                        help="probability threshold; repeatable")
        if chain:
            sp.add_argument("--variant", help="coil|coilplus")
            sp.add_argument("--iters", type=int)
            sp.add_argument("--burnin", type=int)
            sp.add_argument("--thin", type=float)
            sp.add_argument("--chains", type=int)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--H", type=int, help="latent dimension")
            sp.add_argument("--jobs", type=int, help="worker processes (default: chain count)")
            sp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)

    sp = sub.add_parser("fit", help="run chains and write posterior artifacts")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("cv", help="heldout-pair cross-validation")
    common(sp)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--pairs", type=int)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("traits", help="trait importance from fit artifacts")
    common(sp)
    sp.add_argument("--fit-dir", dest="fit_dir")
    sp.add_argument("--B", type=int, help="permutations (default 100)")
    sp.set_defaults(func=cmd_traits)

    sp = sub.add_parser("summarize", help="re-summarise fit artifacts")
    common(sp, chain=False)
    sp.add_argument("--fit-dir", dest="fit_dir")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("simulate", help="write a synthetic dataset plus truth")
    sp.add_argument("--config", help="YAML file with a synth section")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--perfect-detection", dest="perfect_detection", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="check input invariants")
    common(sp, chain=False)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, netdata.DataError, netdata.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except gibbs.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
