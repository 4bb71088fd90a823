"""Assignment policies and their evaluation: best uniform arm, an
all-interactions OLS policy, tabular policies (including the oracle built
from sealed potential outcomes), inverse-propensity-weighted value
estimation on a holdout, and a bootstrap gain report against the
best-uniform benchmark.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._util import stream
from .dataset import ExperimentDataset, SealedOutcomes, TrainTestSplit
from .errors import ConfigError, DomainError
from .estimation import per_arm_means

__all__ = [
    "UniformPolicy",
    "LinearInteractionPolicy",
    "TabularPolicy",
    "oracle_policy",
    "policy_from_config",
    "best_uniform",
    "fit_ols_policy",
    "IpwEstimate",
    "evaluate_ipw",
    "evaluate_oracle",
    "gain_report",
]


@dataclass(frozen=True)
class UniformPolicy:
    """Everyone gets the same arm."""

    arm: int

    def __post_init__(self) -> None:
        if self.arm < 0:
            raise DomainError(f"arm index must be >= 0, got {self.arm}")

    def assign_x(self, x: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(x)), self.arm, dtype=int)

    def assign(self, dataset: ExperimentDataset) -> np.ndarray:
        if self.arm >= dataset.m:
            raise DomainError(f"policy arm {self.arm} not present in a {dataset.m}-arm dataset")
        return np.full(dataset.n, self.arm, dtype=int)

    def describe(self) -> str:
        return f"uniform[{self.arm}]"

    def to_config(self) -> dict:
        return {"kind": "uniform", "arm": self.arm}


@dataclass(frozen=True)
class LinearInteractionPolicy:
    """argmax over arms of a per-arm linear score. theta[a] is
    (intercept, slopes...) for arm a; ties go to the lowest arm index."""

    theta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.atleast_2d(np.asarray(self.theta, dtype=float)))
        if not np.all(np.isfinite(self.theta)):
            raise DomainError("policy coefficients must be finite")
        self.theta.setflags(write=False)

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.theta.shape[1] - 1:
            raise DomainError(
                f"expected {self.theta.shape[1] - 1} covariates, got {x.shape[1]}"
            )
        return np.column_stack([np.ones(len(x)), x]) @ self.theta.T

    def assign_x(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)

    def assign(self, dataset: ExperimentDataset) -> np.ndarray:
        if dataset.m != self.theta.shape[0]:
            raise DomainError(
                f"policy covers {self.theta.shape[0]} arms, dataset has {dataset.m}"
            )
        return self.assign_x(dataset.x)

    def describe(self) -> str:
        return "ols_interaction"

    def to_config(self) -> dict:
        return {"kind": "linear_interaction", "theta": self.theta.tolist()}


@dataclass(frozen=True)
class TabularPolicy:
    """Explicit unit_id -> arm table; the form the oracle policy takes."""

    assignment: dict
    label: str = "tabular"

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "assignment", {str(k): int(v) for k, v in self.assignment.items()}
        )
        if not self.assignment:
            raise DomainError("tabular policy needs at least one unit")

    def assign(self, dataset: ExperimentDataset) -> np.ndarray:
        out = np.empty(dataset.n, dtype=int)
        for i, uid in enumerate(dataset.unit_ids):
            if uid not in self.assignment:
                raise DomainError(f"tabular policy has no arm for unit {uid!r}")
            out[i] = self.assignment[uid]
        return out

    def describe(self) -> str:
        return self.label

    def to_config(self) -> dict:
        return {"kind": "tabular", "assignment": dict(self.assignment), "label": self.label}


def oracle_policy(sealed: SealedOutcomes) -> TabularPolicy:
    """Per-unit argmax of the sealed potential outcomes (ties to the lowest
    arm). Only constructible on synthetic data, by design."""
    picks = np.argmax(sealed.y, axis=1)
    return TabularPolicy(dict(zip(sealed.unit_ids, picks.tolist())), label="oracle")


def policy_from_config(doc: dict) -> UniformPolicy | LinearInteractionPolicy | TabularPolicy:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("policy config must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "uniform":
        return UniformPolicy(int(doc["arm"]))
    if kind == "linear_interaction":
        return LinearInteractionPolicy(np.asarray(doc["theta"], dtype=float))
    if kind == "tabular":
        return TabularPolicy(doc["assignment"], label=doc.get("label", "tabular"))
    raise ConfigError(f"unknown policy kind {kind!r}")


# --------------------------------------------------------------------------
# fitting


def best_uniform(train: ExperimentDataset) -> UniformPolicy:
    """Arm with the highest training mean outcome; ties -> lowest index."""
    means = per_arm_means(train)
    return UniformPolicy(int(np.argmax(means)))


def fit_ols_policy(train: ExperimentDataset) -> LinearInteractionPolicy:
    """One regression on [1, X, arm dummies, dummy x X interactions] with
    arm 0 as the reference, then argmax over per-arm predictions. The
    reference choice cannot matter: the span of the design is the same for
    every choice, so fitted predictions are identical."""
    n, p, m = train.n, train.p, train.m
    k = (p + 1) * m
    if k > n:
        raise DomainError(f"design has {k} columns but only {n} rows")
    design = np.ones((n, k))
    design[:, 1 : 1 + p] = train.x
    for a in range(1, m):
        dummy = (train.arm == a).astype(float)
        design[:, p + a] = dummy
        lo = 1 + p + (m - 1) + (a - 1) * p
        design[:, lo : lo + p] = dummy[:, None] * train.x
    beta, _, rank, _ = np.linalg.lstsq(design, train.outcome, rcond=None)
    if rank < k:
        warnings.warn(
            f"interaction design is rank deficient ({rank} < {k}); "
            "using the minimum-norm fit",
            stacklevel=2,
        )
    theta = np.empty((m, p + 1))
    theta[0, 0] = beta[0]
    theta[0, 1:] = beta[1 : 1 + p]
    for a in range(1, m):
        theta[a, 0] = beta[0] + beta[p + a]
        lo = 1 + p + (m - 1) + (a - 1) * p
        theta[a, 1:] = beta[1 : 1 + p] + beta[lo : lo + p]
    return LinearInteractionPolicy(theta)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class IpwEstimate:
    value: float
    se: float
    n_matched: int
    match_rate: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise DomainError("IPW value must be finite")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "se": self.se,
            "n_matched": self.n_matched,
            "match_rate": self.match_rate,
        }


def _ipw_terms(policy, dataset: ExperimentDataset) -> np.ndarray:
    picks = policy.assign(dataset)
    matched = picks == dataset.arm
    return np.where(matched, dataset.outcome / dataset.propensity, 0.0)


def evaluate_ipw(policy, dataset: ExperimentDataset) -> IpwEstimate:
    """(1/n) sum of matched outcomes reweighted by 1/propensity. The SE is
    the sample SD of the per-row terms over sqrt(n)."""
    picks = policy.assign(dataset)
    matched = picks == dataset.arm
    n_matched = int(matched.sum())
    if n_matched == 0:
        warnings.warn(
            "policy matches no holdout assignment; IPW value is 0 by convention",
            stacklevel=2,
        )
    terms = np.where(matched, dataset.outcome / dataset.propensity, 0.0)
    se = float(terms.std(ddof=1) / math.sqrt(dataset.n)) if dataset.n > 1 else 0.0
    return IpwEstimate(
        value=float(terms.mean()),
        se=se,
        n_matched=n_matched,
        match_rate=n_matched / dataset.n,
    )


def evaluate_oracle(policy, dataset: ExperimentDataset, sealed: SealedOutcomes) -> float:
    """Mean of the sealed potential outcome each unit would receive. Exact,
    and only possible when the dataset came from the synthetic generator."""
    row_of = {uid: i for i, uid in enumerate(sealed.unit_ids)}
    try:
        rows = np.array([row_of[uid] for uid in dataset.unit_ids])
    except KeyError as missing:
        raise DomainError(
            f"no sealed outcomes for unit {missing.args[0]!r}; oracle evaluation "
            "needs the synthetic generator's sealed matrix"
        ) from None
    picks = policy.assign(dataset)
    return float(sealed.y[rows, picks].mean())


def gain_report(
    policies: list,
    dataset: ExperimentDataset,
    split: TrainTestSplit,
    n_boot: int = 1000,
    seed: int = 0,
) -> list[dict]:
    """IPW values on the holdout with bootstrap SEs, benchmarked against the
    best uniform arm found on the training side (always the first row).

    diff_se_boot is the SE of (policy - benchmark) under paired resampling,
    the right yardstick for "is the improvement real"; rel_improvement is
    relative to the benchmark's point estimate.
    """
    if n_boot < 2:
        raise ConfigError(f"n_boot must be >= 2, got {n_boot}")
    train = dataset.subset(split.train_idx)
    holdout = dataset.subset(split.test_idx)
    bench = best_uniform(train)
    entries = [(f"best_uniform[{holdout.arm_names[bench.arm]}]", bench)]
    entries += [(policy.describe(), policy) for policy in policies]
    terms = [_ipw_terms(policy, holdout) for _, policy in entries]
    # one shared index stream keeps the resamples paired across policies and
    # the chunking keeps peak memory flat on large holdouts
    boot_vals = np.empty((len(entries), n_boot))
    rng = stream(seed)
    chunk = max(1, int(20_000_000 // holdout.n))
    done = 0
    while done < n_boot:
        take = min(chunk, n_boot - done)
        idx = rng.integers(0, holdout.n, size=(take, holdout.n))
        for j, t in enumerate(terms):
            boot_vals[j, done : done + take] = t[idx].mean(axis=1)
        done += take
    bench_value = float(terms[0].mean())
    rows = []
    for j, ((label, _), t) in enumerate(zip(entries, terms)):
        value = float(t.mean())
        rows.append(
            {
                "policy": label,
                "value": value,
                "se_boot": float(boot_vals[j].std(ddof=1)),
                "abs_improvement": value - bench_value,
                "rel_improvement": (value - bench_value) / bench_value
                if bench_value != 0.0
                else math.nan,
                "diff_se_boot": float((boot_vals[j] - boot_vals[0]).std(ddof=1)),
            }
        )
    return rows
