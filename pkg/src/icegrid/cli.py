"""Batch pipeline front-end.

Subcommands map one-to-one onto the library stages:

    variogram  exploratory per-core semivariograms and linear fits
    fit        hyperparameter posterior on a deterministic grid (JSON)
    impute     gridded posterior marginals, the data product (CSV)
    sample     joint posterior sample paths (CSV)
    event      windowed minimum / timing functionals of an ensemble
    compare    BIC ranking of covariance structures
    simulate   synthetic misaligned dataset in the canonical CSV format
    calibrate  replicated coverage study

Configuration comes from defaults, then an optional JSON config file, then
command-line flags (highest precedence).  Every output embeds the config,
its hash and the seed, and reruns with identical config + seed are
byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import calibration, imputation, inference, ingest, modelsel, paths, variogram
from .errors import ConfigError, IceGridError
from .util import write_csv, write_json

_CONFIG_DEFAULTS = {
    "cores": [],                 # list of {"id", "path", "section_length"?}
    "reference": None,           # default: first core
    "model": "m1",
    "window": None,              # [t_min, t_max] restriction, kyr
    "grid_start": None,          # default: first multiple of grid_step inside the data span
    "grid_end": None,
    "grid_step": 0.02,
    "delta_z": 0.75,
    "delta_pi": 2.5,
    "grid_cap": 100000,
    "rho_bounds": [0.5, 1.0],
    "seed": 0,
    "threads": None,             # default: ICEGRID_THREADS env var, else 1
    "out_dir": ".",
    "init": None,                # {"v2": ..., ...} starting point for fits
    "n_paths": 1000,
    "event_window": [7.90, 8.50],
    "variogram_bins": 30,
    "variogram_max_lag": None,
    "models": ["m1", "m2", "m3"],
    "sim_theta": {"v2": 0.2, "rho": 0.9, "sigma2_eps": 0.5},
    "sim_model": "m1",
    "sim_n_annual": 2200,
    "sim_windows": [10, 11],
    "sim_replicates": 200,
    "sim_probes": 20,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; one instance drives one subcommand."""

    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def canonical_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.values["seed"],
                "config": self.canonical_json()}


def _validate(values: dict, need_cores: bool, need_grid: bool = False) -> RunConfig:
    problems = []
    if need_cores:
        if not values["cores"]:
            problems.append("no input cores configured (use --cores or the config file)")
        seen = set()
        for i, spec in enumerate(values["cores"]):
            if not isinstance(spec, dict) or "id" not in spec or "path" not in spec:
                problems.append(f"cores[{i}] needs 'id' and 'path'")
                continue
            if spec["id"] in seen:
                problems.append(f"cores[{i}]: duplicate id {spec['id']!r}")
            seen.add(spec["id"])
            if not os.path.exists(spec["path"]):
                problems.append(f"cores[{i}]: file not found: {spec['path']}")
            sl = spec.get("section_length")
            if sl is not None and not (isinstance(sl, (int, float)) and sl > 0):
                problems.append(f"cores[{i}]: section_length must be positive")
        ref = values["reference"]
        if ref is not None and ref not in seen:
            problems.append(f"reference core {ref!r} is not among the configured cores")
    if values["model"] not in ("m1", "m2", "m3"):
        problems.append(f"model must be m1, m2 or m3, got {values['model']!r}")
    if values["window"] is not None:
        w = values["window"]
        if not (isinstance(w, (list, tuple)) and len(w) == 2 and w[0] < w[1]):
            problems.append("window must be [t_min, t_max] with t_min < t_max")
    if not values["grid_step"] > 0:
        problems.append("grid_step must be positive")
    if need_grid and values["grid_start"] is not None and values["grid_end"] is not None \
            and not values["grid_start"] < values["grid_end"]:
        problems.append("grid_start must be below grid_end")
    if not values["delta_z"] > 0:
        problems.append("delta_z must be positive")
    if not values["delta_pi"] > 0:
        problems.append("delta_pi must be positive")
    if not values["grid_cap"] >= 1:
        problems.append("grid_cap must be >= 1")
    rb = values["rho_bounds"]
    if not (isinstance(rb, (list, tuple)) and len(rb) == 2 and -1 <= rb[0] < rb[1] <= 1):
        problems.append("rho_bounds must be [lo, hi] with -1 <= lo < hi <= 1")
    if not isinstance(values["seed"], int):
        problems.append("seed must be an integer")
    if values["threads"] is not None and not (isinstance(values["threads"], int)
                                              and values["threads"] >= 1):
        problems.append("threads must be a positive integer")
    if not values["n_paths"] >= 1:
        problems.append("n_paths must be >= 1")
    ew = values["event_window"]
    if not (isinstance(ew, (list, tuple)) and len(ew) == 2 and ew[0] < ew[1]):
        problems.append("event_window must be [t_a, t_b] with t_a < t_b")
    if problems:
        raise ConfigError(problems)
    return RunConfig(values)


def _threads(cfg: RunConfig) -> int:
    if cfg.threads is not None:
        return cfg.threads
    env = os.environ.get("ICEGRID_THREADS")
    return max(1, int(env)) if env else 1


def _load_dataset(cfg: RunConfig) -> ingest.AlignedDataset:
    cores = [ingest.load_core_csv(spec["path"], spec["id"], spec.get("section_length"))
             for spec in cfg.cores]
    reference = cfg.reference or cfg.cores[0]["id"]
    data = ingest.align(cores, reference)
    if cfg.window is not None:
        data = ingest.restrict(data, cfg.window[0], cfg.window[1])
    return data


def _model(cfg: RunConfig, data: ingest.AlignedDataset, kind: str | None = None,
           m: int | None = None) -> inference.CovarianceModel:
    return inference.CovarianceModel(kind or cfg.model, m if m is not None else data.m,
                                     tuple(cfg.rho_bounds))


def _init_theta(cfg: RunConfig) -> inference.HyperParams | None:
    return None if cfg.init is None else inference.HyperParams.from_dict(cfg.init)


def _default_grid(cfg: RunConfig, data: ingest.AlignedDataset) -> imputation.ImputationGrid:
    """Multiples of grid_step covering the requested (or observed) span."""
    step = cfg.grid_step
    start, end = cfg.grid_start, cfg.grid_end
    if start is None:
        start = np.ceil((data.t_o[0] - 1e-9) / step) * step
    if end is None:
        end = data.t_o[-1]
    return imputation.ImputationGrid.regular(start, end, step)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_variogram(cfg: RunConfig) -> list[str]:
    data = _load_dataset(cfg)
    written = []
    fits = {}
    for cid in data.core_ids:
        series = data.core_series(cid)
        vg = variogram.empirical_semivariogram(series, cfg.variogram_max_lag,
                                               cfg.variogram_bins)
        fit = variogram.fit_linear_variogram(vg)
        fits[cid] = {"sigma2": fit.sigma2, "slope": fit.slope, "v2": fit.v2,
                     "n_iterations": fit.n_iterations, "converged": fit.converged,
                     "weighted_rss": fit.weighted_rss}
        path = _out(cfg, f"variogram_{cid}.csv")
        write_csv(path, ["lag", "gamma", "count"],
                  zip(vg.lags, vg.gammas, vg.counts), cfg.meta())
        written.append(path)
        theo, samp = variogram.qq_points(variogram.standardized_increments(series, fit))
        qq_path = _out(cfg, f"qq_{cid}.csv")
        write_csv(qq_path, ["theoretical", "sample"], zip(theo, samp), cfg.meta())
        written.append(qq_path)
    fit_path = _out(cfg, "variogram_fits.json")
    write_json(fit_path, {"fits": fits}, cfg.meta())
    written.append(fit_path)
    return written


def _fit_posterior(cfg: RunConfig, data, model) -> inference.DiscretePosterior:
    mode = inference.find_mode(data, model, _init_theta(cfg))
    return inference.explore_grid(data, model, mode, step=cfg.delta_z,
                                  drop=cfg.delta_pi, max_points=cfg.grid_cap)


def _cmd_fit(cfg: RunConfig) -> list[str]:
    data = _load_dataset(cfg)
    written = []
    if cfg.model == "m2" and data.m > 1:
        # independent cores: one single-core posterior file each
        for cid in data.core_ids:
            sub = ingest.single_core(data, cid)
            post = _fit_posterior(cfg, sub, _model(cfg, sub, "m2", 1))
            path = _out(cfg, f"posterior_m2_{cid}.json")
            write_json(path, post.to_dict(), {**cfg.meta(), "core_id": cid})
            written.append(path)
    else:
        post = _fit_posterior(cfg, data, _model(cfg, data))
        path = _out(cfg, f"posterior_{cfg.model}.json")
        write_json(path, post.to_dict(), cfg.meta())
        written.append(path)
    return written


def _load_posterior(path: str) -> tuple[inference.DiscretePosterior, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    meta = payload.pop("_meta", {})
    return inference.DiscretePosterior.from_dict(payload), meta


def _posterior_dataset(cfg: RunConfig, post: inference.DiscretePosterior, meta: dict):
    """Dataset matching a posterior: the full one, or one core for m2 files."""
    data = _load_dataset(cfg)
    if post.model.m == 1 and data.m > 1:
        core_id = meta.get("core_id")
        if core_id is None:
            raise ConfigError(["single-core posterior lacks core_id metadata; "
                               "cannot match it to a multi-core dataset"])
        data = ingest.single_core(data, core_id)
    if post.model.m != data.m:
        raise ConfigError([f"posterior is for m={post.model.m} cores, dataset has {data.m}"])
    return data


def _cmd_impute(cfg: RunConfig, posterior_file: str) -> list[str]:
    post, meta = _load_posterior(posterior_file)
    data = _posterior_dataset(cfg, post, meta)
    grid = _default_grid(cfg, data)
    mix = imputation.mixture_marginals(post, data, grid, threads=_threads(cfg))
    rows = imputation.product_rows(mix)
    path = _out(cfg, "product.csv")
    write_csv(path, ["time", "core", "mean", "variance", "q025", "q25", "q50", "q75", "q975"],
              rows, cfg.meta())
    return [path]


def _cmd_sample(cfg: RunConfig, posterior_file: str) -> list[str]:
    post, meta = _load_posterior(posterior_file)
    data = _posterior_dataset(cfg, post, meta)
    grid = _default_grid(cfg, data)
    ens = paths.sample_paths(post, data, grid, n_paths=cfg.n_paths,
                             seed=cfg.seed, threads=_threads(cfg))
    rows = []
    for s in range(ens.n_paths):
        for l, t in enumerate(grid.t_g):
            for c, cid in enumerate(ens.core_ids):
                rows.append((s, t, cid, ens.values[s, l, c]))
    path = _out(cfg, "ensemble.csv")
    write_csv(path, ["path_id", "time", "core", "value"], rows, cfg.meta())
    return [path]


def _read_ensemble(path: str) -> paths.PathEnsemble:
    ids, times, cores, vals = [], [], [], []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header != ["path_id", "time", "core", "value"]:
                    raise ConfigError([f"{path}: unexpected ensemble header {header}"])
                continue
            pid, t, cid, v = line.split(",")
            ids.append(int(pid))
            times.append(float(t))
            cores.append(cid)
            vals.append(float(v))
    if not ids:
        raise ConfigError([f"{path}: empty ensemble"])
    core_ids = tuple(dict.fromkeys(cores))
    t_g = np.asarray(sorted(set(times)))
    n_paths = max(ids) + 1
    values = np.full((n_paths, t_g.size, len(core_ids)), np.nan)
    t_index = {t: i for i, t in enumerate(t_g)}
    c_index = {c: i for i, c in enumerate(core_ids)}
    for pid, t, cid, v in zip(ids, times, cores, vals):
        values[pid, t_index[t], c_index[cid]] = v
    if np.isnan(values).any():
        raise ConfigError([f"{path}: ensemble rows do not cover a full path/time/core cube"])
    delta = float(np.min(np.diff(t_g))) if t_g.size > 1 else 1.0
    grid = imputation.ImputationGrid(t_g, delta)
    return paths.PathEnsemble(grid, core_ids, values, np.zeros(n_paths, dtype=np.intp), 0)


def _cmd_event(cfg: RunConfig, ensemble_file: str) -> list[str]:
    ens = _read_ensemble(ensemble_file)
    window = tuple(cfg.event_window)
    rows = []
    summaries = {}
    for cid in ens.core_ids:
        ev = paths.path_min(ens, cid, window)
        for pid in range(ev.x_min.size):
            rows.append((pid, cid, ev.x_min[pid], ev.t_min[pid]))
        summ = paths.summarize_event(ens, cid, window)
        summaries[cid] = {"x_min": summ.x_min, "t_min": summ.t_min,
                          "n_paths": summ.n_paths, "window": list(summ.window)}
    event_path = _out(cfg, "event.csv")
    write_csv(event_path, ["path_id", "core", "x_min", "t_min"], rows, cfg.meta())
    summary_path = _out(cfg, "event_summary.json")
    write_json(summary_path, {"cores": summaries}, cfg.meta())
    return [event_path, summary_path]


def _cmd_compare(cfg: RunConfig) -> list[str]:
    data = _load_dataset(cfg)
    kinds = [k for k in cfg.models
             if (k != "m3" or data.m == 2) and (k != "m1" or data.m >= 2)]
    # m1 is nested in m3 (a = 1), so its fit seeds the wider search; a cold
    # 4-parameter start can wander into a degenerate corner.
    scores: dict[str, modelsel.ModelScore] = {}
    for kind in sorted(kinds, key=lambda k: k != "m1"):
        init = None
        if kind == "m3" and "m1" in scores:
            th = scores["m1"].thetas[0]
            init = inference.HyperParams(v2=th.v2, sigma2_eps=th.sigma2_eps,
                                         rho=th.rho, a=1.0)
        scores[kind] = modelsel.bic(data, _model(cfg, data, kind), init=init,
                                    threads=_threads(cfg))
    ranking = modelsel.compare([scores[k] for k in kinds])
    path = _out(cfg, "comparison.csv")
    write_csv(path, ["rank", "model", "neg2_loglik", "penalty", "bic", "delta_bic",
                     "p", "n_obs"], modelsel.comparison_rows(ranking), cfg.meta())
    print(modelsel.format_comparison(ranking))
    return [path]


def _sim_spec(cfg: RunConfig, replicates: int | None = None) -> calibration.SimSpec:
    model = inference.CovarianceModel(cfg.sim_model, len(cfg.sim_windows),
                                      tuple(cfg.rho_bounds))
    return calibration.SimSpec(
        inference.HyperParams.from_dict(cfg.sim_theta), cfg.sim_n_annual,
        tuple(cfg.sim_windows), cfg.seed,
        replicates if replicates is not None else cfg.sim_replicates, model)


def _cmd_simulate(cfg: RunConfig) -> list[str]:
    spec = _sim_spec(cfg, replicates=1)
    data, truth = calibration.simulate_dataset(spec)
    written = []
    for cid in data.core_ids:
        series = data.core_series(cid)
        path = _out(cfg, f"sim_{cid}.csv")
        write_csv(path, ["age_yr_bp", "d18o"],
                  zip(series.times * 1000.0, series.values), cfg.meta())
        written.append(path)
    truth_path = _out(cfg, "sim_truth.csv")
    rows = [(t, *row) for t, row in zip(truth.times, truth.x)]
    write_csv(truth_path, ["time", *data.core_ids], rows, cfg.meta())
    written.append(truth_path)
    return written


def _cmd_calibrate(cfg: RunConfig) -> list[str]:
    spec = _sim_spec(cfg)
    table = calibration.coverage_study(spec, cfg.sim_probes, threads=_threads(cfg))
    path = _out(cfg, "coverage.csv")
    write_csv(path, ["name", "n_trials", "cover50", "cover90"],
              calibration.coverage_rows(table),
              {**cfg.meta(), "n_replicates": table.n_replicates,
               "n_failed": table.n_failed})
    return [path]


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parse_cores(specs: list[str]) -> list[dict]:
    """ID=PATH[:SECTION_LENGTH] command-line core specs."""
    out = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError([f"--cores entries look like ID=PATH[:LENGTH], got {spec!r}"])
        cid, rest = spec.split("=", 1)
        if ":" in rest:
            path, length = rest.rsplit(":", 1)
            try:
                out.append({"id": cid, "path": path, "section_length": float(length)})
            except ValueError:
                raise ConfigError([f"bad section length in {spec!r}"]) from None
        else:
            out.append({"id": cid, "path": rest})
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--cores", nargs="+", metavar="ID=PATH[:LEN]")
    p.add_argument("--reference")
    p.add_argument("--window", nargs=2, type=float, metavar=("T_MIN", "T_MAX"))


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="icegrid",
                                  description="joint gridding of misaligned core records")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("variogram", help="per-core semivariograms and linear fits")
    _add_common(p)
    p.add_argument("--max-lag", dest="variogram_max_lag", type=float)
    p.add_argument("--bins", dest="variogram_bins", type=int)

    p = sub.add_parser("fit", help="posterior of the hyperparameters")
    _add_common(p)
    p.add_argument("--model", choices=("m1", "m2", "m3"))
    p.add_argument("--delta-z", dest="delta_z", type=float)
    p.add_argument("--delta-pi", dest="delta_pi", type=float)
    p.add_argument("--grid-cap", dest="grid_cap", type=int)
    p.add_argument("--rho-bounds", dest="rho_bounds", nargs=2, type=float)
    p.add_argument("--init", help="JSON dict of starting values, or @file")

    p = sub.add_parser("impute", help="gridded posterior marginals (data product)")
    _add_common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--grid-start", dest="grid_start", type=float)
    p.add_argument("--grid-end", dest="grid_end", type=float)
    p.add_argument("--grid-step", dest="grid_step", type=float)

    p = sub.add_parser("sample", help="joint posterior sample paths")
    _add_common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--grid-start", dest="grid_start", type=float)
    p.add_argument("--grid-end", dest="grid_end", type=float)
    p.add_argument("--grid-step", dest="grid_step", type=float)
    p.add_argument("--n-paths", dest="n_paths", type=int)

    p = sub.add_parser("event", help="windowed minima of an ensemble")
    _add_common(p)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--event-window", dest="event_window", nargs=2, type=float)

    p = sub.add_parser("compare", help="BIC ranking of covariance structures")
    _add_common(p)
    p.add_argument("--models", nargs="+", choices=("m1", "m2", "m3"))

    p = sub.add_parser("simulate", help="write one synthetic dataset")
    _add_common(p)
    _add_sim_flags(p)

    p = sub.add_parser("calibrate", help="replicated coverage study")
    _add_common(p)
    _add_sim_flags(p)
    p.add_argument("--replicates", dest="sim_replicates", type=int)
    p.add_argument("--probes", dest="sim_probes", type=int)

    return top


def _add_sim_flags(p: argparse.ArgumentParser):
    p.add_argument("--sim-model", dest="sim_model", choices=("m1", "m2", "m3"))
    p.add_argument("--n-annual", dest="sim_n_annual", type=int)
    p.add_argument("--windows", dest="sim_windows", nargs="+", type=int)
    p.add_argument("--theta-true", dest="sim_theta",
                   help="JSON dict of true hyperparameters")


def _build_config(args: argparse.Namespace, need_cores: bool,
                  need_grid: bool = False) -> RunConfig:
    values = dict(_CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
        values.update(file_values)
    for key in _CONFIG_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "cores", None):
        values["cores"] = _parse_cores(args.cores)
    if getattr(args, "window", None):
        values["window"] = list(args.window)
    if isinstance(values.get("init"), str):
        raw = values["init"]
        if raw.startswith("@"):
            with open(raw[1:]) as fh:
                values["init"] = json.load(fh)
        else:
            values["init"] = json.loads(raw)
    if isinstance(values.get("sim_theta"), str):
        values["sim_theta"] = json.loads(values["sim_theta"])
    if isinstance(values.get("rho_bounds"), tuple):
        values["rho_bounds"] = list(values["rho_bounds"])
    return _validate(values, need_cores, need_grid)


_NEEDS_CORES = {"variogram", "fit", "impute", "sample", "compare"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args, args.command in _NEEDS_CORES,
                            args.command in ("impute", "sample"))
        if args.command == "variogram":
            written = _cmd_variogram(cfg)
        elif args.command == "fit":
            written = _cmd_fit(cfg)
        elif args.command == "impute":
            written = _cmd_impute(cfg, args.posterior)
        elif args.command == "sample":
            written = _cmd_sample(cfg, args.posterior)
        elif args.command == "event":
            written = _cmd_event(cfg, args.ensemble)
        elif args.command == "compare":
            written = _cmd_compare(cfg)
        elif args.command == "simulate":
            written = _cmd_simulate(cfg)
        else:
            written = _cmd_calibrate(cfg)
    except IceGridError as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            report["problems"] = exc.problems
        print(json.dumps(report, indent=2, sort_keys=True), file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
