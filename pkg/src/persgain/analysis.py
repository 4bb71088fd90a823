"""What-if machinery over the simulation engine: predicted gain for a study
described by its moments, parameter sensitivity sweeps, cross-study
counterfactual swaps, and a table of gains under small single-parameter
improvements.

Every operation here holds the base seed fixed across the compared
configurations (common random numbers), so differences between cells are
driven by the parameters, not by resampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import ConfigError
from .simulate import NormalMeans, SimConfig, rho_lower_bound, simulate_gain

__all__ = [
    "StudyProfile",
    "SimSettings",
    "predict_gain",
    "SensitivityResult",
    "sensitivity_sweep",
    "counterfactual_swap",
    "elasticity_table",
]

_SWEEPABLE = ("s", "sigma", "rho", "sigma_eps", "m")


@dataclass(frozen=True)
class StudyProfile:
    """A study reduced to the five quantities the gain model consumes.

    Average responses are modeled as Normal(mean, s^2); `mean` is the
    study's grand mean outcome and only shifts both policy values equally,
    so it never moves the gain.
    """

    name: str
    s: float
    sigma: float
    rho: float
    sigma_eps: float
    m: int
    mean: float = 0.0
    outcome_scale_note: str = ""

    def __post_init__(self) -> None:
        for attr in ("s", "sigma", "sigma_eps"):
            value = getattr(self, attr)
            if value < 0 or not math.isfinite(value):
                raise ConfigError(f"{attr} must be finite and >= 0, got {value}")
        if int(self.m) != self.m or self.m < 2:
            raise ConfigError(f"m must be an integer >= 2, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        bound = rho_lower_bound(self.m)
        if not bound <= self.rho <= 1.0:
            raise ConfigError(
                f"rho must lie in [-1/(m-1), 1] = [{bound}, 1] for m = {self.m}, "
                f"got {self.rho}"
            )
        if not math.isfinite(self.mean):
            raise ConfigError(f"mean must be finite, got {self.mean}")

    def to_config(self) -> dict:
        return {
            "name": self.name,
            "s": self.s,
            "sigma": self.sigma,
            "rho": self.rho,
            "sigma_eps": self.sigma_eps,
            "m": self.m,
            "mean": self.mean,
            "outcome_scale_note": self.outcome_scale_note,
        }

    @staticmethod
    def from_config(doc: dict) -> "StudyProfile":
        required = {"name", "s", "sigma", "rho", "sigma_eps", "m"}
        missing = required - set(doc)
        if missing:
            raise ConfigError(f"profile missing fields: {sorted(missing)}")
        unknown = set(doc) - required - {"mean", "outcome_scale_note"}
        if unknown:
            raise ConfigError(f"profile has unknown fields: {sorted(unknown)}")
        return StudyProfile(
            name=str(doc["name"]),
            s=float(doc["s"]),
            sigma=float(doc["sigma"]),
            rho=float(doc["rho"]),
            sigma_eps=float(doc["sigma_eps"]),
            m=int(doc["m"]),
            mean=float(doc.get("mean", 0.0)),
            outcome_scale_note=str(doc.get("outcome_scale_note", "")),
        )


@dataclass(frozen=True)
class SimSettings:
    """How hard to run the simulator for analysis queries."""

    n_individuals: int = 10_000
    n_replications: int = 500
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_individuals < 1 or self.n_replications < 1:
            raise ConfigError("n_individuals and n_replications must be >= 1")
        if self.n_jobs < 1:
            raise ConfigError(f"n_jobs must be >= 1, got {self.n_jobs}")

    def to_config(self) -> dict:
        return {
            "n_individuals": self.n_individuals,
            "n_replications": self.n_replications,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
        }


def _sim_config(profile: StudyProfile, settings: SimSettings) -> SimConfig:
    return SimConfig(
        m=profile.m,
        sigma=profile.sigma,
        rho=profile.rho,
        dist=NormalMeans(mean=profile.mean, s=profile.s),
        sigma_eps=profile.sigma_eps,
        n_individuals=settings.n_individuals,
        n_replications=settings.n_replications,
        seed=settings.seed,
    )


def predict_gain(profile: StudyProfile, settings: SimSettings = SimSettings()) -> tuple[float, float]:
    """Expected personalization gain for the study, with its MC standard error."""
    result = simulate_gain(_sim_config(profile, settings), n_jobs=settings.n_jobs)
    return result.gain_mean, result.gain_se


def _validated(profile: StudyProfile, parameter: str, value: float) -> StudyProfile:
    """profile with one parameter replaced; bound violations name the bound."""
    if parameter in ("s", "sigma", "sigma_eps"):
        if value < 0 or not math.isfinite(value):
            raise ConfigError(f"{parameter} grid value {value} violates the bound {parameter} >= 0")
        return replace(profile, **{parameter: float(value)})
    if parameter == "rho":
        bound = rho_lower_bound(profile.m)
        if not bound <= value <= 1.0:
            raise ConfigError(
                f"rho grid value {value} violates the bound -1/(m-1) <= rho <= 1 "
                f"(= [{bound}, 1] for m = {profile.m})"
            )
        return replace(profile, rho=float(value))
    if parameter == "m":
        if int(value) != value or value < 2:
            raise ConfigError(f"m grid value {value} violates the bound: integer m >= 2")
        new = replace(profile, m=int(value))
        return new
    raise ConfigError(f"parameter must be one of {_SWEEPABLE}, got {parameter!r}")


@dataclass(frozen=True)
class SensitivityResult:
    parameter: str
    baseline_value: float
    grid: tuple[float, ...]
    gain_mean: tuple[float, ...]
    gain_se: tuple[float, ...]
    common_random_numbers: bool = True

    def to_rows(self) -> list[dict]:
        return [
            {
                "parameter": self.parameter,
                "value": v,
                "gain_mean": g,
                "gain_se": se,
                "is_baseline": int(v == self.baseline_value),
            }
            for v, g, se in zip(self.grid, self.gain_mean, self.gain_se)
        ]


def sensitivity_sweep(
    profile: StudyProfile,
    parameter: str,
    grid: Sequence[float],
    settings: SimSettings = SimSettings(),
) -> SensitivityResult:
    """Gain at each grid value of one parameter, everything else at baseline.

    All points share the settings seed, so per-replication draws are common
    across the grid and monotone parameter effects show up per-seed, not
    just on average.
    """
    if len(grid) == 0:
        raise ConfigError("grid must contain at least one value")
    values = sorted(float(v) for v in grid)
    means, ses = [], []
    for value in values:
        point = _validated(profile, parameter, value)
        g, se = predict_gain(point, settings)
        means.append(g)
        ses.append(se)
    return SensitivityResult(
        parameter=parameter,
        baseline_value=float(getattr(profile, parameter)),
        grid=tuple(values),
        gain_mean=tuple(means),
        gain_se=tuple(ses),
    )


def counterfactual_swap(
    profile_a: StudyProfile,
    profile_b: StudyProfile,
    parameter: str,
    settings: SimSettings = SimSettings(),
) -> list[dict]:
    """Four cells: each study at its own value of the focal parameter, and
    with the other study's value substituted. Same seed everywhere."""
    if parameter not in ("sigma", "rho", "sigma_eps", "m"):
        raise ConfigError(
            f"swap parameter must be one of ('sigma', 'rho', 'sigma_eps', 'm'), got {parameter!r}"
        )
    rows = []
    for host, donor in ((profile_a, profile_a), (profile_a, profile_b),
                        (profile_b, profile_b), (profile_b, profile_a)):
        value = getattr(donor, parameter)
        cell = _validated(host, parameter, value)
        g, se = predict_gain(cell, settings)
        rows.append(
            {
                "study": host.name,
                "parameter": parameter,
                "value_used": value,
                "source": "own" if donor is host else donor.name,
                "gain_mean": g,
                "gain_se": se,
            }
        )
    return rows


def elasticity_table(
    profile: StudyProfile,
    delta: float = 0.01,
    settings: SimSettings = SimSettings(),
) -> list[dict]:
    """Gain under each single-parameter improvement, against baseline.

    s, sigma and sigma_eps move by a `delta` fraction of their current
    value (s down, sigma up, sigma_eps down). rho moves DOWN by `delta` in
    absolute correlation points (floored at the PSD bound): a proportional
    cut would shrink to nothing exactly where correlation stops mattering,
    making the comparison across parameters regime-dependent.

    The first row is the baseline; the `best` field on every row names the
    improvement with the highest gain. Same seed for all rows.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    base_gain, base_se = predict_gain(profile, settings)
    rho_floor = rho_lower_bound(profile.m) + 1e-9
    variants = [
        ("s_down", "s", profile.s * (1.0 - delta)),
        ("sigma_up", "sigma", profile.sigma * (1.0 + delta)),
        ("rho_down", "rho", max(profile.rho - delta, rho_floor)),
        ("sigma_eps_down", "sigma_eps", profile.sigma_eps * (1.0 - delta)),
    ]
    rows = [
        {
            "change": "baseline",
            "parameter": "",
            "old_value": math.nan,
            "new_value": math.nan,
            "gain_mean": base_gain,
            "gain_se": base_se,
            "gain_delta": 0.0,
        }
    ]
    for change, parameter, new_value in variants:
        cell = _validated(profile, parameter, new_value)
        g, se = predict_gain(cell, settings)
        rows.append(
            {
                "change": change,
                "parameter": parameter,
                "old_value": getattr(profile, parameter),
                "new_value": new_value,
                "gain_mean": g,
                "gain_se": se,
                "gain_delta": g - base_gain,
            }
        )
    best = max(rows[1:], key=lambda r: r["gain_mean"])["change"]
    for row in rows:
        row["best"] = best
    return rows
