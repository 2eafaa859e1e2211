"""Batch command-line front end: simulate, study, fit, predict, export-surface.

Every command reads an optional JSON config (schema-validated, unknown keys
rejected), applies flag overrides, and writes its artifacts under the output
directory only.  All commands are deterministic given (config, seed); study
replicates may run on several threads without changing any output byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import io as svio
from .basis import BSplineBasis, evaluate_basis_many, uniform_basis
from .design import build_design, fitted_to_response
from .fpca import FPCAResult, fpca
from .simulation import METHODS, SimulationConfig, aggregate_replicates, generate, \
    run_replicates, write_study_csv
from .solver import coefficient_surface, predict_standardized
from .tuning import TuningGrid, select

_BASIS_SPEC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "order": {"type": "integer", "minimum": 1},
        "n_basis": {"type": "integer", "minimum": 1},
        "domain": {"type": ["array", "null"], "items": {"type": "number"},
                   "minItems": 2, "maxItems": 2},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "predictors": {"type": "string"},
                "response": {"type": "string"},
            },
        },
        "bases": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "smoothing": _BASIS_SPEC_SCHEMA,
                "per_variable": {
                    "type": "object",
                    "additionalProperties": _BASIS_SPEC_SCHEMA,
                },
                "t_basis": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "order": {"type": "integer", "minimum": 1},
                        "domain": {"type": ["array", "null"],
                                   "items": {"type": "number"},
                                   "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "fpca": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_components": {"type": ["integer", "null"], "minimum": 1},
                "variance_share": {"type": "number",
                                   "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "penalty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "adaptive": {"type": "boolean"},
                "weight_method": {"enum": ["joint", "per-group"]},
                "alphas": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "t_basis_sizes": {"type": "array", "items": {"type": "integer"},
                                  "minItems": 1},
                "lambdas": {"type": ["array", "null"],
                            "items": {"type": "number"}, "minItems": 1},
                "n_lambda": {"type": "integer", "minimum": 2},
                "lambda_ratio": {"type": "number", "exclusiveMinimum": 0,
                                 "exclusiveMaximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_sweeps": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "surface_grid": {"type": "integer", "minimum": 1},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "p": {"type": "integer", "minimum": 2},
                "gen_s_basis": {"type": "integer", "minimum": 1},
                "gen_t_basis": {"type": "integer", "minimum": 1},
                "gen_order": {"type": "integer", "minimum": 1},
                "n_time_points": {"type": "integer", "minimum": 2},
                "noise_level": {"type": "number", "exclusiveMinimum": 0},
                "predictor_noise_factor": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_values": {"type": "array", "items": {"type": "integer"},
                             "minItems": 1},
                "noise_levels": {"type": "array", "items": {"type": "number"},
                                 "minItems": 1},
                "replicates": {"type": "integer", "minimum": 1},
                "p": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "methods": {"type": "array", "items": {"enum": list(METHODS)},
                            "minItems": 1},
                "smoothing_basis_size": {"type": "integer", "minimum": 1},
                "smoothing_order": {"type": "integer", "minimum": 1},
                "n_components": {"type": ["integer", "null"], "minimum": 1},
                "weight_method": {"enum": ["joint", "per-group"]},
                "alphas": {"type": "array", "items": {"type": "number"},
                           "minItems": 1},
                "t_basis_sizes": {"type": "array", "items": {"type": "integer"},
                                  "minItems": 1},
                "n_lambda": {"type": "integer", "minimum": 2},
                "lambda_ratio": {"type": "number", "exclusiveMinimum": 0,
                                 "exclusiveMaximum": 1},
            },
        },
    },
}

DEFAULT_CONFIG = {
    "data": {"predictors": "predictors.csv", "response": "response.csv"},
    "bases": {
        "smoothing": {"order": 4, "n_basis": 8, "domain": None},
        "per_variable": {},
        "t_basis": {"order": 4, "domain": None},
    },
    "fpca": {"n_components": None, "variance_share": 0.99},
    "penalty": {
        "adaptive": True,
        "weight_method": "joint",
        "alphas": [0.5, 0.9, 1.0],
        "t_basis_sizes": [1, 4, 6, 8],
        "lambdas": None,
        "n_lambda": 50,
        "lambda_ratio": 1e-3,
        "tol": 1e-6,
        "max_sweeps": 10000,
    },
    "output": {"directory": "svcflm_out", "surface_grid": 21},
    "simulate": {
        "n": 100, "p": 6, "gen_s_basis": 5, "gen_t_basis": 4, "gen_order": 4,
        "n_time_points": 21, "noise_level": 0.1, "predictor_noise_factor": 0.1,
        "seed": 0,
    },
    "study": {
        "n_values": [100, 200], "noise_levels": [0.1, 0.3], "replicates": 20,
        "p": 6, "seed": 0, "methods": list(METHODS),
        "smoothing_basis_size": 8, "smoothing_order": 4,
        "n_components": 2, "weight_method": "per-group",
        "alphas": [0.5, 0.9, 1.0], "t_basis_sizes": [1, 2, 4],
        "n_lambda": 50, "lambda_ratio": 1e-3,
    },
}


def load_config(path: str | None) -> dict:
    """Read, schema-validate and default-fill a JSON run configuration."""
    if path is None:
        user = {}
    else:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    try:
        jsonschema.validate(user, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"invalid config at {where}: {exc.message}")
    merged = {}
    for section, defaults in DEFAULT_CONFIG.items():
        merged[section] = {**defaults, **user.get(section, {})}
    return merged


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _basis_to_dict(basis: BSplineBasis) -> dict:
    return {"domain": list(basis.domain), "order": basis.order,
            "interior_knots": list(basis.interior_knots)}


def _basis_from_dict(spec: dict) -> BSplineBasis:
    return BSplineBasis(domain=tuple(spec["domain"]), order=spec["order"],
                        interior_knots=tuple(spec["interior_knots"]))


def _subject_names(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"s{i + 1:0{width}d}" for i in range(n)]


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    sim = dict(config["simulate"])
    if args.n is not None:
        sim["n"] = args.n
    if args.p is not None:
        sim["p"] = args.p
    if args.seed is not None:
        sim["seed"] = args.seed
    out = Path(args.out or config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)

    sim_config = SimulationConfig(replicates=1, **sim)
    data = generate(sim_config)
    subjects = _subject_names(sim_config.n)
    variables = [f"x{j + 1}" for j in range(sim_config.p)]

    rows = []
    for j, var in enumerate(variables):
        for i, subj in enumerate(subjects):
            for alpha, s_val in enumerate(data.time_points):
                rows.append((subj, var, float(s_val), float(data.curves[i, j, alpha])))
    svio.LongTable.from_rows(rows).write_csv(out / "predictors.csv")
    svio.ResponseTable.from_rows(
        [(subj, float(data.y[i]), float(data.t[i])) for i, subj in enumerate(subjects)]
    ).write_csv(out / "response.csv")

    truth = {
        "seed": sim_config.seed,
        "active": [variables[j] for j in sorted(data.active)],
        "subjects": subjects,
        "f": [float(v) for v in data.f],
        "t": [float(v) for v in data.t],
        "s_basis": _basis_to_dict(data.s_basis),
        "t_basis": _basis_to_dict(data.t_basis),
        "coef_true": {var: data.coef_true[:, j, :].tolist()
                      for j, var in enumerate(variables)},
        "b_true": {var: data.b_true[j].tolist() for j, var in enumerate(variables)},
    }
    _write_json(out / "truth.json", truth)
    print(f"wrote {out / 'predictors.csv'}, {out / 'response.csv'}, {out / 'truth.json'}")
    return 0


# ---------------------------------------------------------------------------
# study


def cmd_study(args) -> int:
    config = load_config(args.config)
    study = dict(config["study"])
    if args.replicates is not None:
        study["replicates"] = args.replicates
    if args.seed is not None:
        study["seed"] = args.seed
    out = Path(args.out or config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)

    grid = TuningGrid(alphas=tuple(study["alphas"]),
                      t_basis_sizes=tuple(study["t_basis_sizes"]),
                      n_lambda=study["n_lambda"],
                      lambda_ratio=study["lambda_ratio"])
    methods = tuple(study["methods"])

    reports = []
    log_rows = []
    sim_defaults = config["simulate"]
    panel_idx = 0
    for n in study["n_values"]:
        for noise in study["noise_levels"]:
            panel_seed = int(np.random.SeedSequence(
                study["seed"], spawn_key=(panel_idx,)).generate_state(1, np.uint64)[0])
            panel_idx += 1
            panel_config = SimulationConfig(
                n=n, p=study["p"], noise_level=noise, seed=panel_seed,
                replicates=study["replicates"],
                gen_s_basis=sim_defaults["gen_s_basis"],
                gen_t_basis=sim_defaults["gen_t_basis"],
                gen_order=sim_defaults["gen_order"],
                n_time_points=sim_defaults["n_time_points"],
                predictor_noise_factor=sim_defaults["predictor_noise_factor"])
            results = run_replicates(
                panel_config, methods=methods, grid=grid,
                smoothing_basis_size=study["smoothing_basis_size"],
                smoothing_order=study["smoothing_order"],
                n_components=study["n_components"],
                weight_method=study["weight_method"],
                threads=args.threads)
            reports.append(aggregate_replicates(panel_config, methods, results))
            for rep, res in enumerate(results):
                for name in methods:
                    value = res[name]
                    if isinstance(value, Exception):
                        log_rows.append((n, noise, rep, name, "", "", "",
                                         f"failed: {value}"))
                    else:
                        log_rows.append((n, noise, rep, name,
                                         f"{value[0]:.17g}", f"{value[1]:.17g}",
                                         f"{value[2]:.17g}", "ok"))

    write_study_csv(out / "study.csv", reports)
    with open(out / "replicates.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,s,replicate,method,rmse,apr,anr,status\n")
        for row in log_rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    print(f"wrote {out / 'study.csv'} and {out / 'replicates.csv'}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _domain_from(values: np.ndarray, override) -> tuple[float, float]:
    if override is not None:
        return float(override[0]), float(override[1])
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo >= hi:
        raise ValueError(f"cannot infer a basis domain from constant values {lo!r}")
    return lo, hi


def _smoothing_basis_for(var: str, times: np.ndarray, config: dict) -> BSplineBasis:
    spec = dict(config["bases"]["smoothing"])
    spec.update(config["bases"]["per_variable"].get(var, {}))
    domain = _domain_from(times, spec.get("domain"))
    return uniform_basis(domain, spec["order"], spec["n_basis"])


def cmd_fit(args) -> int:
    config = load_config(args.config)
    out = Path(args.out or config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)

    long = svio.load_long_csv(config["data"]["predictors"])
    resp = svio.load_response_csv(config["data"]["response"])
    variables = long.variable_names()
    bases = {}
    for var in variables:
        mask = np.array([v == var for v in long.variables])
        bases[var] = _smoothing_basis_for(var, long.times[mask], config)
    samples, y, t, subjects = svio.assemble(long, resp, bases)

    fpca_cfg = config["fpca"]
    fpca_results = [fpca(samples[var], n_components=fpca_cfg["n_components"],
                         variance_share=fpca_cfg["variance_share"])
                    for var in variables]

    t_spec = config["bases"]["t_basis"]
    t_domain = _domain_from(t, t_spec.get("domain"))

    def builder(m2: int):
        return build_design(fpca_results, t, uniform_basis(t_domain, t_spec["order"], m2),
                            y)

    pen = config["penalty"]
    grid = TuningGrid(alphas=tuple(pen["alphas"]),
                      t_basis_sizes=tuple(pen["t_basis_sizes"]),
                      lambdas=None if pen["lambdas"] is None else tuple(pen["lambdas"]),
                      n_lambda=pen["n_lambda"], lambda_ratio=pen["lambda_ratio"])
    best_fit, report = select(builder, grid, adaptive=pen["adaptive"],
                              weight_method=pen["weight_method"],
                              tol=pen["tol"], max_sweeps=pen["max_sweeps"])
    best = report.best
    design = builder(best.t_basis_size)
    fitted_raw = fitted_to_response(design, best_fit.fitted)
    active_vars = [var for j, var in enumerate(variables) if best_fit.active[j]]

    report.to_csv(out / "tuning_report.csv")
    with open(out / "selected_variables.txt", "w", encoding="utf-8", newline="\n") as fh:
        for var in active_vars:
            fh.write(var + "\n")

    n_grid = config["output"]["surface_grid"]
    grid_t = np.linspace(*design.t_basis.domain, n_grid)
    for j, var in enumerate(variables):
        if not best_fit.active[j]:
            continue
        grid_s = np.linspace(*fpca_results[j].basis.domain, n_grid)
        surface = coefficient_surface(best_fit, j, fpca_results[j], design.t_basis,
                                      grid_s, grid_t)
        svio.export_surface_grid(surface, grid_s, grid_t, out / f"surface_{var}.csv")

    summary = {
        "selected": {
            "lambda": best.lam, "alpha": best.alpha, "t_basis_size": best.t_basis_size,
            "sigma2": best.sigma2, "df": best.df, "active": active_vars,
        },
        "y_center": design.y_center,
        "y_scale": design.y_scale,
        "t_basis": _basis_to_dict(design.t_basis),
        "variables": variables,
        "subjects": subjects,
        "fitted": [float(v) for v in fitted_raw],
        "model": {
            var: {
                "basis": _basis_to_dict(fpca_results[j].basis),
                "mean_coef": fpca_results[j].mean_coef.tolist(),
                "eigen_coef": fpca_results[j].eigen_coef.tolist(),
                "eigenvalues": fpca_results[j].eigenvalues.tolist(),
                "coef": best_fit.coef[j].tolist(),
            }
            for j, var in enumerate(variables)
        },
    }
    _write_json(out / "fit_summary.json", summary)
    print(f"selected {len(active_vars)} of {len(variables)} variables; "
          f"artifacts under {out}")
    return 0


# ---------------------------------------------------------------------------
# predict


def _load_model(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    model = {}
    for var, spec in summary["model"].items():
        result = FPCAResult(
            basis=_basis_from_dict(spec["basis"]),
            mean_coef=np.array(spec["mean_coef"], dtype=float),
            eigen_coef=np.array(spec["eigen_coef"], dtype=float),
            eigenvalues=np.array(spec["eigenvalues"], dtype=float),
            scores=np.zeros((0, len(spec["eigenvalues"]))))
        model[var] = (result, np.array(spec["coef"], dtype=float))
    summary["_model"] = model
    summary["_t_basis"] = _basis_from_dict(summary["t_basis"])
    return summary


def cmd_predict(args) -> int:
    summary = _load_model(args.model)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)

    new_subjects = svio.load_subject_t_csv(args.subjects)
    subjects = sorted(new_subjects)
    new_t = np.array([new_subjects[s] for s in subjects])

    variables = summary["variables"]
    if subjects:
        long = svio.load_long_csv(args.predictors)
        curves = [[long.curve(subj, var) for subj in subjects] for var in variables]
    else:
        curves = [[] for _ in variables]

    fpca_results = [summary["_model"][var][0] for var in variables]
    coef = [summary["_model"][var][1] for var in variables]
    fitted = predict_standardized(coef, fpca_results, summary["_t_basis"], curves, new_t)
    y_hat = fitted * summary["y_scale"] + summary["y_center"]

    path = out / "predictions.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("subject,y_hat\n")
        for subj, val in zip(subjects, y_hat):
            fh.write(f"{subj},{val:.17g}\n")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# export-surface


def cmd_export_surface(args) -> int:
    summary = _load_model(args.model)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    var = args.variable
    if var not in summary["model"]:
        raise ValueError(f"unknown variable {var!r}; model has {summary['variables']}")
    result, coef = summary["_model"][var]
    t_basis = summary["_t_basis"]
    grid_s = np.linspace(*result.basis.domain, args.grid_s)
    grid_t = np.linspace(*t_basis.domain, args.grid_t)
    b_mat = coef.reshape(result.n_components, t_basis.n_basis, order="F")
    phi = evaluate_basis_many(result.basis, grid_s) @ result.eigen_coef
    psi = evaluate_basis_many(t_basis, grid_t)
    surface = phi @ b_mat @ psi.T
    path = out / f"surface_{var}.csv"
    svio.export_surface_grid(surface, grid_s, grid_t, path)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcflm",
        description="Sparse varying-coefficient functional linear models: "
                    "simulate data, run the benchmark study, fit, predict and "
                    "export coefficient surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for replicate-level parallelism")

    p_sim = sub.add_parser("simulate", help="write one synthetic dataset with ground truth")
    common(p_sim)
    p_sim.add_argument("--n", type=int, help="sample size override")
    p_sim.add_argument("--p", type=int, help="number of predictors override")
    p_sim.set_defaults(func=cmd_simulate)

    p_study = sub.add_parser("study", help="run the Monte-Carlo comparison study")
    common(p_study)
    p_study.add_argument("--replicates", type=int, help="replicates per setting")
    p_study.set_defaults(func=cmd_study)

    p_fit = sub.add_parser("fit", help="fit a model to CSV data and export artifacts")
    common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict responses for new subjects")
    common(p_pred)
    p_pred.add_argument("--model", required=True, help="fit_summary.json from fit")
    p_pred.add_argument("--predictors", required=True, help="long-format predictor CSV")
    p_pred.add_argument("--subjects", required=True, help="subject,t CSV of new subjects")
    p_pred.set_defaults(func=cmd_predict)

    p_surf = sub.add_parser("export-surface",
                            help="export a coefficient surface grid from a fitted model")
    common(p_surf)
    p_surf.add_argument("--model", required=True, help="fit_summary.json from fit")
    p_surf.add_argument("--variable", required=True, help="predictor variable name")
    p_surf.add_argument("--grid-s", type=int, default=21, dest="grid_s")
    p_surf.add_argument("--grid-t", type=int, default=21, dest="grid_t")
    p_surf.set_defaults(func=cmd_export_surface)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        parser.error("--seed must fit in an unsigned 64-bit integer")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
