"""Config-driven command line front end.

Usage::

    fctbn <command> --config run.json [--seed N] [--out DIR]

Commands: simulate, fit, cv, predict, trajectory, evaluate, export-graph.
Each run validates its config up front (exit 1 on violations), writes its
artifacts plus a ``manifest.json`` capturing the resolved config, seed and
library version, and removes partial outputs on failure (exit 2).  Re-runs
with an identical manifest produce byte-identical outputs.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import evaluate_score_table, holdout_evaluate
from .inference import emergence_trajectory, predict_onset
from .io import (PcaModel, dump_json, export_graph_dot, load_json,
                 load_score_table, pca_fit_transform, read_cohort,
                 write_auc_report, write_cohort, write_onset_table,
                 write_risk_curves)
from .learn import (FitOptions, PenaltyConfig, adaptive_weights, cross_validate,
                    fista_fit, regularization_path)
from .model import Graph, model_from_json, model_to_json
from .simulate import RNG_NAME, CovariateSampler, simulate_cohort

PAPER_GRID = [0.0] + [10.0 ** k for k in range(0, 7)]
DEFAULT_HORIZONS = [12.0, 24.0, 36.0, 48.0, 60.0]


class ConfigError(Exception):
    pass


def _need(cfg: dict, key: str, kind=None):
    if key not in cfg:
        raise ConfigError(f"config missing required field {key!r}")
    value = cfg[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config field {key!r} has wrong type {type(value).__name__}")
    return value


def _need_path(cfg: dict, key: str) -> Path:
    p = Path(_need(cfg, key, str))
    if not p.exists():
        raise ConfigError(f"config field {key!r}: path {p} does not exist")
    return p


def _need_seed(cfg: dict):
    seed = _need(cfg, "seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("config field 'seed' must be a nonnegative integer")
    return seed


def _load_model(cfg, key="model"):
    return model_from_json(_need_path(cfg, key).read_text())


def _fit_options(cfg: dict) -> FitOptions:
    solver = cfg.get("solver", {})
    return FitOptions(
        max_iter=int(solver.get("max_iter", 5000)),
        tol=float(solver.get("tol", 1e-8)),
        irreversible=bool(cfg.get("irreversible", True)),
        gmm_early_stop=bool(cfg.get("gmm_early_stop", False)),
        gmm_seed=int(cfg.get("seed", 0)),
    )


def _penalty_template(cfg: dict) -> PenaltyConfig:
    pen = cfg.get("penalty", {})
    return PenaltyConfig(
        lam=0.0,
        group_size_multiplier=pen.get("group_size_multiplier"),
        penalize_baseline=bool(pen.get("penalize_baseline", False)),
    )


def _candidate_graph(cfg: dict, d: int) -> Graph:
    parents = cfg.get("parents")
    if parents is None:
        return Graph.complete(d)
    return Graph(tuple(tuple(pa) for pa in parents))


def _read_cohort(cfg: dict):
    return read_cohort(_need_path(cfg, "cohort"))


def _reduce_cohort(cfg: dict, cohort, run):
    """Optional PCA reduction of the cohort covariates; fitted loadings are
    written next to the model so queries can apply the same reduction."""
    k = cfg.get("pca_components")
    if k is None:
        return cohort
    pca, reduced = pca_fit_transform(cohort.covariates, int(k))
    run.path("pca.json").write_text(dump_json(pca.to_dict()))
    cohort.covariates = reduced
    cohort.meta = dict(cohort.meta, m=reduced.shape[1])
    return cohort


class Run:
    """Tracks artifacts so a failed run leaves no partial outputs."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written = []

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            if p.exists():
                p.unlink()

    def manifest(self, command: str, config: dict):
        doc = {
            "command": command,
            "config": config,
            "rng": RNG_NAME,
            "version": __version__,
            "outputs": sorted(p.name for p in self.written) + ["manifest.json"],
        }
        self.path("manifest.json").write_text(dump_json(doc))


def cmd_simulate(cfg: dict, run: Run):
    spec = _load_model(cfg)
    seed = _need_seed(cfg)
    n = _need(cfg, "n", int)
    horizon = float(_need(cfg, "horizon"))
    sampler = CovariateSampler(_need(cfg, "covariates", dict)["components"])
    if sampler.m != spec.m:
        raise ConfigError(
            f"covariate components encode m={sampler.m}, model expects m={spec.m}")
    cohort = simulate_cohort(spec, sampler, n, horizon, seed)
    for name, path in write_cohort(run.out_dir, cohort).items():
        run.written.append(path)


def _write_fit(run: Run, fit, irreversible: bool):
    from .model import ModelSpec

    spec = ModelSpec(graph=fit.coeffs.graph, coeffs=fit.coeffs, irreversible=irreversible)
    run.path("model.json").write_text(model_to_json(spec))
    run.path("fit.json").write_text(dump_json(fit.diagnostics()))


def cmd_fit(cfg: dict, run: Run):
    cohort = _reduce_cohort(cfg, _read_cohort(cfg), run)
    lam = float(_need(cfg, "lambda"))
    opts = _fit_options(cfg)
    tmpl = _penalty_template(cfg)
    graph = _candidate_graph(cfg, int(cohort.meta["d"]))
    if bool(cfg.get("adaptive", True)) and lam > 0:
        unpen = fista_fit(cohort, graph, PenaltyConfig(lam=0.0), opts)
        weights = adaptive_weights(unpen.coeffs)
        pen = PenaltyConfig(lam=lam, weights=weights,
                            group_size_multiplier=tmpl.group_size_multiplier,
                            penalize_baseline=tmpl.penalize_baseline)
        fit = fista_fit(cohort, graph, pen, opts, init=unpen.coeffs)
    else:
        pen = PenaltyConfig(lam=lam,
                            group_size_multiplier=tmpl.group_size_multiplier,
                            penalize_baseline=tmpl.penalize_baseline)
        fit = fista_fit(cohort, graph, pen, opts)
    _write_fit(run, fit, opts.irreversible)


def cmd_cv(cfg: dict, run: Run):
    cohort = _reduce_cohort(cfg, _read_cohort(cfg), run)
    seed = _need_seed(cfg)
    grid = [float(v) for v in cfg.get("lambda_grid", PAPER_GRID)]
    folds = int(cfg.get("folds", 5))
    opts = _fit_options(cfg)
    tmpl = _penalty_template(cfg)
    adaptive = bool(cfg.get("adaptive", True))
    graph = _candidate_graph(cfg, int(cohort.meta["d"]))
    cv = cross_validate(cohort, graph, grid, folds, seed, opts, adaptive,
                        penalty_template=tmpl)
    with open(run.path("cv_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "cv_error"])
        for lam, err in cv.curve:
            writer.writerow([format(lam, ".17g"), format(err, ".17g")])
    path = regularization_path(cohort, graph, grid, opts, adaptive,
                               penalty_template=tmpl)
    best = next(fit for fit, (lam, _) in zip(path, cv.curve) if lam == cv.best_lambda)
    summary = {
        "best_lambda": cv.best_lambda,
        "folds": folds,
        "path": [{"lambda": f.lambda_used,
                  "nonzero_groups": f.nonzero_groups,
                  "sparsity_ratio": f.sparsity_ratio} for f in path],
    }
    run.path("cv_summary.json").write_text(dump_json(summary))
    _write_fit(run, best, opts.irreversible)


def _covariate_vector(cfg: dict, m: int) -> np.ndarray:
    z = np.asarray(_need(cfg, "z", list), dtype=float)
    if "pca" in cfg:
        pca = PcaModel.from_dict(load_json(_need_path(cfg, "pca").read_text()))
        z = pca.transform(z.reshape(1, -1))[0]
    if z.shape != (m,):
        raise ConfigError(f"covariate vector has length {z.size}, model expects {m}")
    return z


def cmd_predict(cfg: dict, run: Run):
    spec = _load_model(cfg)
    z = _covariate_vector(cfg, spec.m)
    horizons = [float(h) for h in cfg.get("horizons", DEFAULT_HORIZONS)]
    baseline = np.zeros(spec.d, dtype=np.uint8)
    for i in _need(cfg, "baseline", list):
        baseline[int(i)] = 1
    table = predict_onset(spec, z, baseline, horizons)
    write_onset_table(run.path("onset.csv"), range(spec.d), horizons, table)


def cmd_trajectory(cfg: dict, run: Run):
    spec = _load_model(cfg)
    z = _covariate_vector(cfg, spec.m)
    curves = emergence_trajectory(
        spec, z, prior=[int(i) for i in _need(cfg, "prior", list)],
        horizon_months=float(cfg.get("horizon", 24.0)),
        grid_step=float(cfg.get("grid_step", 1.0)))
    write_risk_curves(run.path("risk_curve.csv"), curves)


def cmd_evaluate(cfg: dict, run: Run):
    cohort = _read_cohort(cfg)
    horizons = [float(h) for h in cfg.get("horizons", DEFAULT_HORIZONS)]
    if "scores" in cfg:
        table = load_score_table(_need_path(cfg, "scores"))
        cells = evaluate_score_table(table, cohort, horizons)
    else:
        spec = _load_model(cfg)
        if "pca" in cfg:
            pca = PcaModel.from_dict(load_json(_need_path(cfg, "pca").read_text()))
            cohort.covariates = pca.transform(cohort.covariates)
        cells = holdout_evaluate(spec, cohort, horizons)
    write_auc_report(run.path("auc.csv"), cells)


def cmd_export_graph(cfg: dict, run: Run):
    spec = _load_model(cfg)
    tol = float(cfg.get("tol", 0.0))
    from .model import structure_from_coefficients

    graph = structure_from_coefficients(spec.coeffs, tol)
    strengths = {}
    for i, pa in enumerate(graph.parents):
        for j in pa:
            k = spec.graph.parents[i].index(j) + 1
            strengths[(j, i)] = float(np.linalg.norm(spec.coeffs.beta[i][:, k, :]))
    run.path("graph.dot").write_text(export_graph_dot(graph, strengths))


COMMANDS = {
    "simulate": (cmd_simulate, True),
    "fit": (cmd_fit, False),
    "cv": (cmd_cv, True),
    "predict": (cmd_predict, False),
    "trajectory": (cmd_trajectory, False),
    "evaluate": (cmd_evaluate, False),
    "export-graph": (cmd_export_graph, False),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fctbn",
        description="Functional continuous-time models of interacting binary conditions")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config for the run")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' or '.')")
    args = parser.parse_args(argv)

    handler, needs_seed = COMMANDS[args.command]
    try:
        cfg = load_json(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        if args.seed is not None:
            cfg["seed"] = args.seed
        if needs_seed:
            _need_seed(cfg)
        out_dir = Path(args.out if args.out is not None else cfg.get("out", "."))
    except (OSError, ValueError, ConfigError) as exc:
        print(f"fctbn {args.command}: {exc}", file=sys.stderr)
        return 1

    run = Run(out_dir)
    manifest_cfg = {k: v for k, v in cfg.items() if k != "out"}
    try:
        handler(cfg, run)
        run.manifest(args.command, manifest_cfg)
    except ConfigError as exc:
        run.cleanup()
        print(f"fctbn {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        run.cleanup()
        print(f"fctbn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
