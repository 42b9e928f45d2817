"""Command-line experiment harness.

    bartlab fit|sweep|exact|diagnose --config FILE [--workers N] [--out DIR]

Configs are TOML. Any value under ``data``, ``sampler`` or ``priors`` that
is listed as an axis may be given as an array; the run grid is the cartesian
product of all arrays. ``BARTLAB_SEED`` overrides ``run.seed``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import _svg
from .chains import (
    build_chain,
    expected_hitting_times,
    spectral_gap,
    stationary,
    write_edge_list,
    write_manifest,
)
from .covariates import (
    AdditiveComponent,
    Dataset,
    DgpSpec,
    ScaleParams,
    apply_bins,
    bin_features,
    load_csv,
    sample_dgp,
    scale_response,
    split_train_test,
    subsample,
)
from .diagnostics import SUMMARY_COLUMNS, summarize, write_summary_csv
from .errors import (
    BartlabError,
    CapacityError,
    ConfigError,
    DiagnosticError,
    IngestionError,
    InfeasibleError,
    NumericalError,
    ReducibleChainError,
)
from .model import Priors
from .optset import enumerate_tse_space, pem_table, write_space_csv
from .samplers import ChainTrace, SamplerConfig, Schedule, init_greedy_boost, run_chain
from .trees import MoveWeights, Tree

log = logging.getLogger("bartlab")

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 2, 3, 4

MOVE_SETS = {
    "default": MoveWeights(),
    "grow_prune": MoveWeights(grow=0.5, prune=0.5, change=0.0, swap=0.0),
    "no_swap": MoveWeights(grow=0.3, prune=0.3, change=0.4, swap=0.0),
}

DESK = {"iterations": 2000, "burn_in": 500, "n_chains": 4, "replicates": 3}
FULL = {"iterations": 11000, "burn_in": 1000, "n_chains": 8, "replicates": 25}

AXES = {
    "data": ("n_train", "binning"),
    "sampler": ("m", "temperature", "burn_in", "variant", "init", "move_set"),
    "priors": ("split_prior",),
}

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_temp = {
    "oneOf": [
        {"type": "number", "minimum": 1},
        {
            "type": "object",
            "properties": {"t_max": {"type": "number", "minimum": 1}, "t_min": {"type": "number", "minimum": 1}},
            "required": ["t_max", "t_min"],
            "additionalProperties": False,
        },
    ]
}


def _axis(item):
    return {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "seed": {"type": "integer", "minimum": 0},
                "n_chains": _pos_int,
                "replicates": _pos_int,
                "full_scale": {"type": "boolean"},
                "save_predictions": {"type": "boolean"},
                "out": {"type": "string"},
                "workers": _pos_int,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["source"],
            "properties": {
                "source": {"enum": ["dgp", "csv"]},
                "kind": {"enum": ["additive_discrete", "low_dim_smooth", "piecewise_linear"]},
                "d": _pos_int,
                "B": {"type": "integer", "minimum": 2},
                "noise_sd": {"type": "number", "minimum": 0},
                "snr": {"type": "number", "exclusiveMinimum": 0},
                "components": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["feature", "thresholds", "values"],
                        "properties": {
                            "feature": {"type": "integer", "minimum": 0},
                            "thresholds": {"type": "array", "items": {"type": "integer"}},
                            "values": {"type": "array", "items": _num},
                        },
                    },
                },
                "path": {"type": "string"},
                "target": {"type": "string"},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "n_test": _pos_int,
                "n_train": _axis({"oneOf": [_pos_int, {"const": "all"}]}),
                "binning": _axis({"type": "string", "pattern": "^(unique|quantiles:[1-9][0-9]*)$"}),
                "scale_response": {"type": "boolean"},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": _axis({"enum": ["default", "marginalized", "tempered", "multistep"]}),
                "m": _axis(_pos_int),
                "temperature": _axis(_temp),
                "iterations": _pos_int,
                "burn_in": _axis({"type": "integer", "minimum": 0}),
                "init": _axis({"enum": ["trivial", "greedy"]}),
                "init_depth": {"type": "integer", "minimum": 0},
                "move_set": _axis({"enum": sorted(MOVE_SETS)}),
                "weights": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "number", "minimum": 0} for k in ("grow", "prune", "change", "swap", "stay")},
                },
                "r": _pos_int,
                "lazy": {"type": "boolean"},
                "max_internal": _pos_int,
            },
        },
        "priors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta": {"type": "number", "minimum": 0},
                "k": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "sigma2": {"type": "number", "exclusiveMinimum": 0},
                "nu": {"type": "number", "exclusiveMinimum": 0},
                "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "split_prior": _axis({"enum": ["uniform", "dirichlet"]}),
                "alpha_dir": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "exact": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m": _pos_int,
                "max_internal": {"type": "integer", "minimum": 0},
                "temperatures": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
                "prior": {"enum": ["chipman", "uniform"]},
                "lazy": {"type": "boolean"},
                "opt_k": {"type": "integer", "minimum": 0},
                "cap": _pos_int,
            },
        },
    },
    "required": ["data"],
}


# ---------------------------------------------------------------------------
# configuration


def _path(err) -> str:
    out = ""
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    data = cfg["data"]
    if data["source"] == "csv" and not {"path", "target"} <= data.keys():
        raise ConfigError("data: csv source needs 'path' and 'target'")
    if data["source"] == "dgp" and "kind" not in data:
        raise ConfigError("data: dgp source needs 'kind'")


def resolve(cfg: dict) -> dict:
    """Fill defaults and apply the seed override."""
    cfg = copy.deepcopy(cfg)
    run = cfg.setdefault("run", {})
    scale = FULL if run.get("full_scale") else DESK
    run.setdefault("name", "run")
    run.setdefault("seed", 0)
    run.setdefault("n_chains", scale["n_chains"])
    run.setdefault("replicates", scale["replicates"])
    run.setdefault("save_predictions", False)
    env = os.environ.get("BARTLAB_SEED")
    if env is not None:
        try:
            run["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"BARTLAB_SEED must be an integer, got {env!r}") from None
    data = cfg["data"]
    data.setdefault("n_train", "all" if data.get("source") == "csv" else 200)
    data.setdefault("binning", "unique")
    data.setdefault("scale_response", True)
    data.setdefault("n_test", 1000)
    data.setdefault("test_fraction", 0.1)
    s = cfg.setdefault("sampler", {})
    s.setdefault("variant", "default")
    s.setdefault("m", 200)
    s.setdefault("temperature", 1.0)
    s.setdefault("iterations", scale["iterations"])
    s.setdefault("burn_in", scale["burn_in"])
    s.setdefault("init", "trivial")
    s.setdefault("init_depth", 3)
    s.setdefault("move_set", "default")
    cfg.setdefault("priors", {}).setdefault("split_prior", "uniform")
    return cfg


def _hashable(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    for k in ("out", "workers", "save_predictions"):
        cfg.get("run", {}).pop(k, None)
    return cfg


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def grid_points(cfg: dict) -> list:
    """Every combination of the axis values, as ``{section.key: value}``."""
    keys, values = [], []
    for section, names in AXES.items():
        for name in names:
            v = cfg.get(section, {}).get(name)
            if v is None:
                continue
            keys.append(f"{section}.{name}")
            values.append(v if isinstance(v, list) else [v])
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def swept_axes(cfg: dict) -> list:
    return [k for k, v in _axis_values(cfg).items() if len(v) > 1]


def _axis_values(cfg):
    out = {}
    for section, names in AXES.items():
        for name in names:
            v = cfg.get(section, {}).get(name)
            if v is not None:
                out[f"{section}.{name}"] = v if isinstance(v, list) else [v]
    return out


def point_config(cfg: dict, point: dict) -> dict:
    c = copy.deepcopy(cfg)
    for key, v in point.items():
        section, name = key.split(".")
        c[section][name] = v
    return c


def _label(v) -> str:
    if isinstance(v, dict):
        return f"linear({v['t_max']:g},{v['t_min']:g})"
    return str(v)


# ---------------------------------------------------------------------------
# data and sampler construction


def dgp_spec(data: dict) -> DgpSpec:
    kind = data["kind"]
    comps = tuple(
        AdditiveComponent(c["feature"], tuple(c["thresholds"]), tuple(c["values"])) for c in data.get("components", ())
    )
    kw = {"d": data.get("d"), "noise_sd": data.get("noise_sd", 1.0), "snr": data.get("snr", 3.0)}
    if kind == "additive_discrete":
        return DgpSpec(kind, B=data.get("B", 2), components=comps, **kw)
    return DgpSpec(kind, **kw)


def _scale_like(ds: Dataset, sp: ScaleParams, tag: bool) -> Dataset:
    # only the training set is guaranteed to land inside [-0.5, 0.5]
    lo, hi = sp.lo, sp.hi
    f = None if ds.f is None else (ds.f - lo) / (hi - lo) - 0.5
    return Dataset(ds.X, (ds.y - lo) / (hi - lo) - 0.5, ds.space, sp if tag else None, f, ds.feature_names)


def _bin(train: Dataset, test: Dataset, binning: str):
    if train.binned:
        return train, test
    if binning == "unique":
        train = bin_features(train, "unique")
    else:
        train = bin_features(train, "quantiles", int(binning.split(":")[1]))
    return train, apply_bins(test, train.space)


def make_data(pcfg: dict, rep: int, seed: int):
    """Train/test pair for one replicate; the test set is shared by replicates."""
    data = pcfg["data"]
    n = data["n_train"]
    if data["source"] == "dgp":
        if n == "all":
            raise ConfigError("data.n_train: 'all' applies to csv sources only")
        spec = dgp_spec(data)
        train = sample_dgp(spec, n, seed + rep)
        test = sample_dgp(spec, data["n_test"], seed + 1_000_003)
    else:
        full = load_csv(data["path"], data["target"])
        rest, test = split_train_test(full, data["test_fraction"], seed)
        if n == "all":
            train = rest
        elif n > rest.n:
            raise ConfigError(f"data.n_train: {n} exceeds the {rest.n} available training rows")
        else:
            train = subsample(rest, n, seed + rep)
    if data["scale_response"]:
        _, sp = scale_response(train.y)
        train, test = _scale_like(train, sp, True), _scale_like(test, sp, False)
    return _bin(train, test, data["binning"])


def _weights(s: dict) -> MoveWeights:
    if "weights" in s:
        return MoveWeights(**s["weights"])
    return MOVE_SETS[s["move_set"]]


def _temperature(t) -> Schedule:
    if isinstance(t, dict):
        return Schedule.linear(t["t_max"], t["t_min"])
    return Schedule.constant(t)


def make_priors(pcfg: dict) -> Priors:
    return Priors(**pcfg.get("priors", {}))


def sampler_config(pcfg: dict, seed: int) -> SamplerConfig:
    s = pcfg["sampler"]
    return SamplerConfig(
        variant=s["variant"],
        m=s["m"],
        weights=_weights(s),
        priors=make_priors(pcfg),
        temperature=_temperature(s["temperature"]),
        r=s.get("r", 1),
        lazy=s.get("lazy", False),
        iterations=s["iterations"],
        burn_in=s["burn_in"],
        seed=seed,
        max_internal=s.get("max_internal"),
    )


# ---------------------------------------------------------------------------
# fit / sweep


@dataclass
class Job:
    point: int
    rep: int
    chain: int
    config: SamplerConfig
    train: Dataset
    test: Dataset
    init: object


def _run_job(job: Job):
    try:
        return run_chain(job.config, job.train, job.init, job.test, chain=job.chain), None
    except NumericalError as exc:
        return None, str(exc)


def _chain_seed(seed, rep, chain):
    return seed + 10_000 * (rep + 1) + chain


def run_fit(cfg: dict, out: Path, workers: int = 1):
    """Run every (point, replicate, chain); returns ``(summary_rows, missing)``."""
    run = cfg["run"]
    seed = run["seed"]
    points = grid_points(cfg)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "data").mkdir(parents=True, exist_ok=True)
    jobs, meta = [], {}
    for pi, point in enumerate(points):
        pcfg = point_config(cfg, point)
        h = config_hash({"config": _hashable(pcfg)})
        for rep in range(run["replicates"]):
            train, test = make_data(pcfg, rep, seed)
            base = sampler_config(pcfg, seed)
            init = None
            if pcfg["sampler"]["init"] == "greedy":
                init = init_greedy_boost(train, base.m, pcfg["sampler"]["init_depth"], np.random.default_rng(seed + rep))
            meta[(pi, rep)] = (point, pcfg, h, train, test)
            _write_test(out / "data" / f"test_p{pi}_r{rep}.csv", test, h)
            for c in range(run["n_chains"]):
                jobs.append(Job(pi, rep, c, base.with_seed(_chain_seed(seed, rep, c)), train, test, init))
    log.info("%d points x %d replicates x %d chains", len(points), run["replicates"], run["n_chains"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    grouped, missing = {}, []
    for job, (trace, err) in zip(jobs, results):
        key = (job.point, job.rep)
        if trace is None:
            missing.append((key, err))
            grouped[key] = None
            continue
        if key in grouped and grouped[key] is None:
            continue
        grouped.setdefault(key, []).append(trace)
    rows = []
    for key in sorted(meta):
        point, pcfg, h, train, test = meta[key]
        traces = grouped.get(key)
        if not traces:
            continue
        synthetic = pcfg["data"]["source"] == "dgp"
        for tr in traces:
            stem = f"p{key[0]}_r{key[1]}_c{tr.chain}"
            preds = out / "traces" / f"{stem}_pred.csv" if run["save_predictions"] else None
            tr.to_csv(out / "traces" / f"{stem}.csv", test.f if synthetic else test.y, preds, h)
        name = pcfg["data"].get("kind") if synthetic else Path(pcfg["data"]["path"]).stem
        row = summarize(traces, test, name, train.n, h, "function" if synthetic else "predictive")
        row.update({k: _label(v) for k, v in point.items()})
        row["replicate"] = key[1]
        rows.append(row)
    extra = [k for k in points[0]] + ["replicate"] if points else ["replicate"]
    write_summary_csv(out / "summary.csv", rows, extra)
    return rows, missing


def _write_test(path, test: Dataset, h: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "y", "f", "config_hash"])
        for i in range(test.n):
            f = "" if test.f is None else repr(float(test.f[i]))
            w.writerow([i, repr(float(test.y[i])), f, h])


METRICS = ("rhat_rmse", "rmse", "coverage")


def aggregate(rows, axes) -> list:
    """Mean and 1.96 standard errors over replicates for every point."""
    groups = {}
    for r in rows:
        key = tuple(r[a] for a in axes)
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(_sort_key(v) for v in k)):
        rs = groups[key]
        for metric in METRICS + tuple(c for c in SUMMARY_COLUMNS if c.startswith("rhat_q")):
            v = np.array([float(r[metric]) for r in rs], dtype=float)
            v = v[np.isfinite(v)]
            mean = float(v.mean()) if v.size else math.nan
            half = float(1.96 * v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            row = dict(zip(axes, key))
            row.update({"config_hash": rs[0]["config_hash"], "metric": metric, "mean": mean, "half_width": half, "n_reps": int(v.size)})
            out.append(row)
    return out


def _sort_key(v):
    try:
        return (0, float(v), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(v))


def plot_sweep(agg, axes, out: Path):
    others = [a for a in axes if a != "data.n_train"]
    files = []
    for metric in METRICS:
        series = {}
        for r in agg:
            if r["metric"] != metric:
                continue
            label = ", ".join(f"{a.split('.')[1]}={r[a]}" for a in others) or metric
            series.setdefault(label, []).append((float(r["data.n_train"]), r["mean"], r["half_width"]))
        lines = [(lab, [p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts]) for lab, pts in series.items()]
        svg = _svg.line_chart(lines, title=metric, xlabel="n_train", ylabel=metric)
        path = out / f"sweep_{metric}.svg"
        path.write_text(svg, encoding="utf-8")
        files.append(path)
    return files


def cmd_fit(cfg: dict, out: Path, workers: int) -> int:
    rows, missing = run_fit(cfg, out, workers)
    for (key, err) in missing:
        log.error("point %d replicate %d failed: %s", key[0], key[1], err)
    print(f"wrote {len(rows)} summary rows to {out / 'summary.csv'}")
    return EXIT_NUMERICAL if missing else EXIT_OK


def cmd_sweep(cfg: dict, out: Path, workers: int) -> int:
    if not swept_axes(cfg):
        raise ConfigError("sweep needs at least one axis with more than one value")
    if cfg["data"]["n_train"] == "all" or not isinstance(cfg["data"]["n_train"], (list, int)):
        raise ConfigError("data.n_train: sweeps plot against numeric training sizes")
    rows, missing = run_fit(cfg, out, workers)
    if not rows:
        raise NumericalError("every run failed; nothing to aggregate")
    axes = list(grid_points(cfg)[0])
    agg = aggregate(rows, axes)
    cols = axes + ["config_hash", "metric", "mean", "half_width", "n_reps"]
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in agg:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    files = plot_sweep(agg, axes, out)
    print(f"wrote {out / 'aggregate.csv'} and {len(files)} plots")
    if missing:
        for key, err in missing:
            log.warning("partial plot: point %d replicate %d missing (%s)", key[0], key[1], err)
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# exact


EXACT_COLUMNS = [
    "config_hash", "n_train", "T", "replicate", "n_states", "dim", "opt_size", "p_opt",
    "stationary_max_err", "stationary_pass", "gap", "t_mix_bound", "hit_opt_from_trivial", "hit_opt_max",
]


def cmd_exact(cfg: dict, out: Path, workers: int) -> int:
    data = cfg["data"]
    if data["source"] != "dgp" or data.get("kind") != "additive_discrete":
        raise ConfigError("data: exact analysis needs an additive_discrete DGP")
    ex = cfg.get("exact", {})
    m = ex.get("m", 2)
    K = ex.get("max_internal", 1)
    temps = ex.get("temperatures", [1.0])
    lazy = ex.get("lazy", True)
    k_opt = ex.get("opt_k", 0)
    prior = ex.get("prior", "chipman")
    spec = dgp_spec(data)
    pri = dict(cfg.get("priors", {}))
    pri.setdefault("sigma2", spec.noise_sd**2 if spec.noise_sd > 0 else 1.0)
    pri.setdefault("lam", 1.0)
    priors = Priors(**pri)
    s = cfg["sampler"]
    variant = s["variant"] if isinstance(s["variant"], str) and s["variant"] != "default" else "marginalized"
    ns = data["n_train"] if isinstance(data["n_train"], list) else [data["n_train"]]
    seed = cfg["run"]["seed"]
    f = spec.f_grid()
    (out / "exact").mkdir(parents=True, exist_ok=True)
    rows = []
    for n in ns:
        for rep in range(cfg["run"]["replicates"]):
            train = sample_dgp(spec, n, seed + rep)
            space = enumerate_tse_space(train.space, m, K, train, cap=ex.get("cap", 10**6))
            table = pem_table(f, space)
            opt = sorted(table.opt(k_opt))
            start = space.find(tuple(Tree() for _ in range(m)))
            for T in temps:
                scfg = SamplerConfig(
                    variant=variant, m=m, weights=_weights(s), priors=priors, temperature=T,
                    r=s.get("r", 1), lazy=lazy, iterations=2, burn_in=0, max_internal=K,
                )
                point = {"n_train": n, "T": T, "m": m, "max_internal": K, "seed": seed + rep, "config": _hashable(cfg)}
                h = config_hash(point)
                chain = build_chain(space, train, scfg, prior=prior)
                pi = stationary(chain)
                err = float(np.abs(pi - chain.target()).max())
                gap = spectral_gap(chain) if lazy else None
                hits = expected_hitting_times(chain, opt)
                rows.append({
                    "config_hash": h, "n_train": n, "T": T, "replicate": rep, "n_states": len(space),
                    "dim": table.dim(), "opt_size": len(opt), "p_opt": float(pi[opt].sum()),
                    "stationary_max_err": err, "stationary_pass": int(err < 1e-10),
                    "gap": gap.gap if gap else math.nan, "t_mix_bound": gap.t_mix if gap else math.nan,
                    "hit_opt_from_trivial": float(hits[start]), "hit_opt_max": float(hits.max()),
                })
                stem = out / "exact" / f"n{n}_T{T:g}_r{rep}"
                write_edge_list(f"{stem}_edges.csv", chain, h)
            write_manifest(out / "exact" / f"n{n}_r{rep}_states.csv", space, h)
            write_space_csv(out / "exact" / f"n{n}_r{rep}_opt.csv", space, table, (k_opt,), h)
    with open(out / "exact.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=EXACT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    print(f"wrote {len(rows)} rows to {out / 'exact.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose


def _read_test(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    y = np.array([float(r["y"]) for r in rows])
    f = np.array([float(r["f"]) for r in rows]) if rows and rows[0]["f"] else None
    return y, f, rows[0]["config_hash"] if rows else ""


def cmd_diagnose(cfg: dict, out: Path, workers: int) -> int:
    """Recompute diagnostics from the traces a previous ``fit`` left in ``out``."""
    tdir = out / "traces"
    if not tdir.is_dir():
        raise ConfigError(f"no traces under {tdir}; run 'bartlab fit' with the same --out first")
    points = grid_points(cfg)
    synthetic = cfg["data"]["source"] == "dgp"
    rows = []
    for pi, point in enumerate(points):
        for rep in range(cfg["run"]["replicates"]):
            test_path = out / "data" / f"test_p{pi}_r{rep}.csv"
            if not test_path.exists():
                raise ConfigError(f"missing {test_path}; the fit output does not match this config")
            y, f, h = _read_test(test_path)
            traces = []
            for c in range(cfg["run"]["n_chains"]):
                stem = tdir / f"p{pi}_r{rep}_c{c}"
                pred = Path(f"{stem}_pred.csv")
                if not pred.exists():
                    raise ConfigError(f"missing {pred}; set run.save_predictions = true before fitting")
                traces.append(ChainTrace.from_csv(f"{stem}.csv", pred))
            test = Dataset(np.zeros((y.size, 1)), y, f=f)
            name = cfg["data"].get("kind") if synthetic else Path(cfg["data"]["path"]).stem
            n_train = point.get("data.n_train", -1)
            n_train = n_train if isinstance(n_train, int) else -1
            row = summarize(traces, test, name, n_train, h, "function" if synthetic else "predictive")
            row.update({k: _label(v) for k, v in point.items()})
            row["replicate"] = rep
            rows.append(row)
    write_summary_csv(out / "diagnostics.csv", rows, list(points[0]) + ["replicate"])
    print(f"wrote {len(rows)} rows to {out / 'diagnostics.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


COMMANDS = {"fit": cmd_fit, "sweep": cmd_sweep, "exact": cmd_exact, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bartlab", description="BART samplers and exact chain analysis")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(load_config(args.config))
        workers = args.workers or cfg["run"].get("workers", 1)
        if workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = Path(args.out or cfg["run"].get("out", "bartlab_out"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, workers)
    except (ConfigError, IngestionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (NumericalError, ReducibleChainError, DiagnosticError, InfeasibleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BartlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
