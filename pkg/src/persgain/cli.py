"""Command-line front end.

One executable, one subcommand per operation. Each command reads an
optional JSON config file (--config) merged with flag overrides (flags
win), writes its artifacts atomically into --out, and drops a
resolved_config.json beside them. That file embeds the full effective
config, so passing it back as --config reproduces the run byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from ._util import fmt_float, write_csv, write_json
from .analysis import (
    SimSettings,
    StudyProfile,
    counterfactual_swap,
    elasticity_table,
    predict_gain,
    sensitivity_sweep,
)
from .analytic import TwoArmParams, expected_gain_over_means, gain_two_arm
from .dataset import SynthDGP, generate_synthetic, load_csv, split
from .errors import ConfigError, PersgainError
from .estimation import estimate_moments
from .policy import best_uniform, fit_ols_policy, gain_report
from .simulate import SimConfig, dist_from_config, simulate_gain, sweep_arms

_BUNDLED_PROFILES = ("penn_geisinger", "walmart")
_OUT_ENV = "PERSGAIN_OUT"

_REQUIRED = object()

_DEFAULTS = {
    "gain": {
        "mu_a": _REQUIRED,
        "mu_b": _REQUIRED,
        "sigma": _REQUIRED,
        "rho": _REQUIRED,
        "s": None,
        "backend": "quadrature",
        "n_draws": 100_000,
        "seed": 0,
    },
    "simulate": {
        "m": _REQUIRED,
        "sigma": _REQUIRED,
        "rho": _REQUIRED,
        "sigma_eps": 0.0,
        "dist": {"kind": "normal", "mean": 0.0, "s": 0.0},
        "n_individuals": 10_000,
        "n_replications": 200,
        "seed": 0,
        "noise_mode": "per_cell",
    },
    "sweep": {
        "m_values": _REQUIRED,
        "sigma": _REQUIRED,
        "rho": _REQUIRED,
        "sigma_eps": 0.0,
        "dist": {"kind": "normal", "mean": 0.0, "s": 0.0},
        "n_individuals": 10_000,
        "n_replications": 200,
        "seed": 0,
        "noise_mode": "per_cell",
    },
    "synth": {"dgp": _REQUIRED, "n": 1_000, "seed": 0},
    "estimate": {"data": _REQUIRED, "train_frac": 0.7, "quantiles": 10, "seed": 0},
    "evaluate": {
        "data": _REQUIRED,
        "train_frac": 0.7,
        "policies": ["uniform", "ols"],
        "n_boot": 1_000,
        "seed": 0,
    },
    "predict": {
        "profile": _REQUIRED,
        "n_individuals": 10_000,
        "n_replications": 500,
        "seed": 0,
    },
    "sensitivity": {
        "profile": _REQUIRED,
        "parameter": _REQUIRED,
        "grid": _REQUIRED,
        "n_individuals": 10_000,
        "n_replications": 500,
        "seed": 0,
    },
    "counterfactual": {
        "profile_a": _REQUIRED,
        "profile_b": _REQUIRED,
        "parameter": _REQUIRED,
        "n_individuals": 10_000,
        "n_replications": 500,
        "seed": 0,
    },
    "elasticity": {
        "profile": _REQUIRED,
        "delta": 0.01,
        "n_individuals": 10_000,
        "n_replications": 500,
        "seed": 0,
    },
}


# --------------------------------------------------------------------------
# config plumbing


def _load_config_file(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    # a resolved_config.json from a previous run is accepted as-is
    if "command" in doc and "config" in doc:
        if doc["command"] != command:
            raise ConfigError(
                f"config file {path} was resolved for command {doc['command']!r}, "
                f"not {command!r}"
            )
        doc = doc["config"]
    return doc


def _resolve(command: str, file_doc: dict, overrides: dict) -> dict:
    defaults = _DEFAULTS[command]
    unknown = set(file_doc) - set(defaults)
    if unknown:
        raise ConfigError(
            f"unknown config field(s) for {command}: {sorted(unknown)}; "
            f"known fields: {sorted(defaults)}"
        )
    resolved = {
        key: default for key, default in defaults.items() if default is not _REQUIRED
    }
    resolved.update(file_doc)
    resolved.update({k: v for k, v in overrides.items() if v is not None})
    missing = [key for key in defaults if key not in resolved]
    if missing:
        raise ConfigError(f"missing required field(s) for {command}: {missing}")
    return resolved


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get(_OUT_ENV) or "persgain_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(command: str, config: dict, out: Path, outputs: list[str]) -> int:
    write_json(
        out / "resolved_config.json",
        {
            "command": command,
            "artifact_version": __version__,
            "config": config,
            "outputs": sorted(outputs),
        },
    )
    for name in sorted(outputs) + ["resolved_config.json"]:
        print(f"wrote {out / name}")
    return 0


def _load_profile(ref) -> StudyProfile:
    if isinstance(ref, dict):
        return StudyProfile.from_config(ref)
    path = Path(str(ref))
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            return StudyProfile.from_config(json.load(fh))
    if str(ref) in _BUNDLED_PROFILES:
        text = resources.files("persgain").joinpath(f"profiles/{ref}.json").read_text()
        return StudyProfile.from_config(json.loads(text))
    raise ConfigError(
        f"profile {ref!r} is neither a file nor a bundled profile "
        f"(bundled: {list(_BUNDLED_PROFILES)})"
    )


def _settings(config: dict, jobs: int) -> SimSettings:
    return SimSettings(
        n_individuals=int(config["n_individuals"]),
        n_replications=int(config["n_replications"]),
        seed=int(config["seed"]),
        n_jobs=jobs,
    )


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# --------------------------------------------------------------------------
# commands


def cmd_gain(config: dict, args: argparse.Namespace) -> int:
    params = TwoArmParams(
        mu_a=float(config["mu_a"]),
        mu_b=float(config["mu_b"]),
        sigma=float(config["sigma"]),
        rho=float(config["rho"]),
    )
    print(f"gain {fmt_float(gain_two_arm(params))}")
    if config["s"] is not None:
        est = expected_gain_over_means(
            params.sigma,
            params.rho,
            float(config["s"]),
            n_draws=int(config["n_draws"]),
            seed=int(config["seed"]),
            backend=config["backend"],
        )
        print(f"expected_gain_over_means {fmt_float(est.value)}")
        print(f"expected_gain_se {fmt_float(est.se)}")
        print(f"backend {est.backend}")
    return 0


def _sim_config_from(config: dict, m: int | None = None) -> SimConfig:
    return SimConfig(
        m=int(config["m"]) if m is None else m,
        sigma=float(config["sigma"]),
        rho=float(config["rho"]),
        dist=dist_from_config(config["dist"]),
        sigma_eps=float(config["sigma_eps"]),
        n_individuals=int(config["n_individuals"]),
        n_replications=int(config["n_replications"]),
        seed=int(config["seed"]),
        noise_mode=config["noise_mode"],
    )


def cmd_simulate(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    result = simulate_gain(_sim_config_from(config), n_jobs=args.jobs)
    summary = result.to_dict()
    gains = summary.pop("per_replication_gains")
    write_json(out / "result.json", summary)
    write_csv(out / "replications.csv", ["replication", "gain"], list(enumerate(gains)))
    return _finish("simulate", config, out, ["result.json", "replications.csv"])


def cmd_sweep(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    m_values = [int(v) for v in config["m_values"]]
    if not m_values:
        raise ConfigError("m_values must contain at least one arm count")
    base = _sim_config_from(config, m=m_values[0])
    rows = sweep_arms(base, m_values, n_jobs=args.jobs)
    header = ["m", "gain_mean", "gain_se", "v_personalized_mean", "v_uniform_mean"]
    write_csv(out / "sweep.csv", header, [[row[k] for k in header] for row in rows])
    return _finish("sweep", config, out, ["sweep.csv"])


def cmd_synth(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    dgp = SynthDGP.from_config(config["dgp"])
    dataset, sealed = generate_synthetic(dgp, n=int(config["n"]), seed=int(config["seed"]))
    from .dataset import write_csv as write_dataset_csv

    write_dataset_csv(dataset, out / "data.csv")
    write_csv(
        out / "sealed.csv",
        ["unit_id"] + [f"y_{name}" for name in dataset.arm_names],
        [[uid] + list(row) for uid, row in zip(sealed.unit_ids, sealed.y)],
    )
    write_json(out / "schema.json", dataset.schema_doc())
    return _finish("synth", config, out, ["data.csv", "sealed.csv", "schema.json"])


def cmd_estimate(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    dataset = load_csv(config["data"])
    sp = split(dataset, float(config["train_frac"]), seed=int(config["seed"]))
    moments = estimate_moments(dataset, sp, n_quantiles=int(config["quantiles"]))
    write_json(out / "moments.json", moments.to_dict())
    return _finish("estimate", config, out, ["moments.json"])


def cmd_evaluate(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    dataset = load_csv(config["data"])
    sp = split(dataset, float(config["train_frac"]), seed=int(config["seed"]))
    train = dataset.subset(sp.train_idx)
    names = config["policies"]
    if isinstance(names, str):
        names = _csv_list(names)
    policies = []
    for name in names:
        if name == "uniform":
            policies.append(best_uniform(train))
        elif name == "ols":
            policies.append(fit_ols_policy(train))
        else:
            raise ConfigError(f"unknown policy {name!r}; choose from ['uniform', 'ols']")
    rows = gain_report(policies, dataset, sp, n_boot=int(config["n_boot"]), seed=int(config["seed"]))
    header = ["policy", "value", "se_boot", "abs_improvement", "rel_improvement", "diff_se_boot"]
    write_csv(out / "report.csv", header, [[row[k] for k in header] for row in rows])
    return _finish("evaluate", config, out, ["report.csv"])


def cmd_predict(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    profile = _load_profile(config["profile"])
    gain, se = predict_gain(profile, _settings(config, args.jobs))
    write_json(
        out / "prediction.json",
        {"profile": profile.to_config(), "gain_mean": gain, "gain_se": se},
    )
    return _finish("predict", config, out, ["prediction.json"])


def cmd_sensitivity(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    profile = _load_profile(config["profile"])
    grid = config["grid"]
    if isinstance(grid, str):
        grid = _float_list(grid)
    result = sensitivity_sweep(profile, config["parameter"], grid, _settings(config, args.jobs))
    header = ["parameter", "value", "gain_mean", "gain_se", "is_baseline"]
    write_csv(
        out / "sensitivity.csv", header, [[row[k] for k in header] for row in result.to_rows()]
    )
    return _finish("sensitivity", config, out, ["sensitivity.csv"])


def cmd_counterfactual(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    rows = counterfactual_swap(
        _load_profile(config["profile_a"]),
        _load_profile(config["profile_b"]),
        config["parameter"],
        _settings(config, args.jobs),
    )
    header = ["study", "parameter", "value_used", "source", "gain_mean", "gain_se"]
    write_csv(out / "counterfactual.csv", header, [[row[k] for k in header] for row in rows])
    return _finish("counterfactual", config, out, ["counterfactual.csv"])


def cmd_elasticity(config: dict, args: argparse.Namespace) -> int:
    out = _out_dir(args)
    profile = _load_profile(config["profile"])
    rows = elasticity_table(profile, float(config["delta"]), _settings(config, args.jobs))
    header = [
        "change",
        "parameter",
        "old_value",
        "new_value",
        "gain_mean",
        "gain_se",
        "gain_delta",
        "best",
    ]
    write_csv(out / "elasticity.csv", header, [[row[k] for k in header] for row in rows])
    return _finish("elasticity", config, out, ["elasticity.csv"])


_HANDLERS = {
    "gain": cmd_gain,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sensitivity": cmd_sensitivity,
    "counterfactual": cmd_counterfactual,
    "elasticity": cmd_elasticity,
}


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="persgain",
        description="Quantify when heterogeneity across treatment arms is worth personalizing on.",
    )
    parser.add_argument("--version", action="version", version=f"persgain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_out: bool = True) -> None:
        p.add_argument("--config", help="JSON config file; flags override its fields")
        if with_out:
            p.add_argument(
                "--out",
                help=f"output directory (default: ${_OUT_ENV} or ./persgain_out)",
            )
            p.add_argument(
                "--jobs",
                type=int,
                default=os.cpu_count() or 1,
                help="worker threads; results are identical at any level",
            )

    p = sub.add_parser("gain", help="closed-form two-arm gain")
    common(p, with_out=False)
    p.add_argument("--mu-a", type=float)
    p.add_argument("--mu-b", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--s", type=float, help="also report the gain averaged over mean draws")
    p.add_argument(
        "--quadrature",
        action="store_const",
        const="quadrature",
        dest="backend",
        help="integrate the mean-averaged gain by quadrature (default)",
    )
    p.add_argument("--n-draws", type=int, help="draws for the mc backend")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="Monte Carlo multi-arm gain")
    common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma-eps", type=float)
    p.add_argument("--n-individuals", type=int)
    p.add_argument("--n-replications", type=int)
    p.add_argument("--noise-mode", choices=["per_cell", "per_individual"])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="gain versus number of arms")
    common(p)
    p.add_argument("--m-values", type=lambda s: [int(float(v)) for v in _csv_list(s)])
    p.add_argument("--sigma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma-eps", type=float)
    p.add_argument("--n-individuals", type=int)
    p.add_argument("--n-replications", type=int)
    p.add_argument("--noise-mode", choices=["per_cell", "per_individual"])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a synthetic experiment")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("estimate", help="estimate moments from an experiment CSV")
    common(p)
    p.add_argument("--data")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--quantiles", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("evaluate", help="fit policies and report IPW gains")
    common(p)
    p.add_argument("--data")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--policies", help="comma-separated: uniform,ols")
    p.add_argument("--n-boot", type=int)
    p.add_argument("--seed", type=int)

    def profile_sim_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--n-individuals", type=int)
        p.add_argument("--n-replications", type=int)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("predict", help="predicted gain for a study profile")
    common(p)
    p.add_argument("--profile", help="profile JSON path or bundled name")
    profile_sim_flags(p)

    p = sub.add_parser("sensitivity", help="gain across a parameter grid")
    common(p)
    p.add_argument("--profile")
    p.add_argument("--parameter", choices=["s", "sigma", "rho", "sigma_eps", "m"])
    p.add_argument("--grid", help="comma-separated values")
    profile_sim_flags(p)

    p = sub.add_parser("counterfactual", help="swap one parameter between two profiles")
    common(p)
    p.add_argument("--profile-a")
    p.add_argument("--profile-b")
    p.add_argument("--parameter", choices=["sigma", "rho", "sigma_eps", "m"])
    profile_sim_flags(p)

    p = sub.add_parser("elasticity", help="gain under small single-parameter improvements")
    common(p)
    p.add_argument("--profile")
    p.add_argument("--delta", type=float)
    profile_sim_flags(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    command = args.command
    try:
        file_doc = _load_config_file(args.config, command) if args.config else {}
        overrides = {
            key: getattr(args, key)
            for key in _DEFAULTS[command]
            if hasattr(args, key) and getattr(args, key) is not None
        }
        config = _resolve(command, file_doc, overrides)
        return _HANDLERS[command](config, args)
    except PersgainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
