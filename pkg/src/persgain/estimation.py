"""Moment estimation from a randomized experiment: the across-arm mean
spread s, the heterogeneity scale sigma and between-arm correlation rho via
a stratified quantile procedure, and the prediction-error scale sigma_eps
from holdout residuals.

The stratified procedure exists because naive plug-ins are biased in
opposite directions: SD(predictions) inflates sigma by the predictor's own
error, while correlating noisy per-unit predictions deflates rho. Averaging
observed outcomes within predicted-score quantiles integrates the noise out
before taking moments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ExperimentDataset, TrainTestSplit
from .errors import ConfigError, DomainError

__all__ = [
    "LinearTLearner",
    "fit_predictor",
    "estimate_s",
    "estimate_sigma_eps",
    "estimate_sigma_rho",
    "MomentEstimates",
    "estimate_moments",
]


@dataclass(frozen=True)
class LinearTLearner:
    """Per-arm linear regression of outcome on covariates, each arm fitted
    only on its own assigned rows. coef[a] is (intercept, slopes...)."""

    coef: np.ndarray
    covariate_names: tuple[str, ...]
    arm_names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        if self.coef.shape != (len(self.arm_names), len(self.covariate_names) + 1):
            raise DomainError("coef must be (arms) x (1 + covariates)")
        if not np.all(np.isfinite(self.coef)):
            raise DomainError("fitted coefficients must be finite")
        self.coef.setflags(write=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Score matrix: column a holds the predicted outcome under arm a."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.covariate_names):
            raise DomainError(
                f"expected {len(self.covariate_names)} covariates, got {x.shape[1]}"
            )
        design = np.column_stack([np.ones(len(x)), x])
        return design @ self.coef.T


def fit_predictor(dataset: ExperimentDataset, split: TrainTestSplit) -> LinearTLearner:
    """Least-squares per-arm fit on the training rows. Rank deficiency is
    tolerated (minimum-norm solution); an arm with no training rows is not."""
    train = dataset.subset(split.train_idx)
    design = np.column_stack([np.ones(train.n), train.x])
    coef = np.zeros((dataset.m, dataset.p + 1))
    thin = []
    for a in range(dataset.m):
        rows = train.arm == a
        count = int(rows.sum())
        if count == 0:
            raise DomainError(f"arm {dataset.arm_names[a]!r} has no training rows")
        if count < dataset.p + 2:
            thin.append(dataset.arm_names[a])
        coef[a], *_ = np.linalg.lstsq(design[rows], train.outcome[rows], rcond=None)
    if thin:
        warnings.warn(
            f"arms {thin} have fewer than p + 2 = {dataset.p + 2} training rows; "
            "fits are unstable",
            stacklevel=2,
        )
    return LinearTLearner(coef, dataset.covariate_names, dataset.arm_names)


def estimate_s(dataset: ExperimentDataset) -> float:
    """Sample SD (denominator m - 1) of the per-arm mean outcomes."""
    means = per_arm_means(dataset)
    return float(np.std(means, ddof=1))


def per_arm_means(dataset: ExperimentDataset) -> np.ndarray:
    counts = dataset.arm_counts()
    for a in range(dataset.m):
        if counts[a] == 0:
            raise DomainError(f"arm {dataset.arm_names[a]!r} has no rows")
    sums = np.bincount(dataset.arm, weights=dataset.outcome, minlength=dataset.m)
    return sums / counts


def estimate_sigma_eps(
    dataset: ExperimentDataset, split: TrainTestSplit, predictor: LinearTLearner
) -> float:
    """SD of holdout residuals y_i - yhat_i at each unit's assigned arm."""
    holdout = dataset.subset(split.test_idx)
    if holdout.n < 2:
        raise DomainError("holdout must contain at least two rows")
    scores = predictor.predict(holdout.x)
    residuals = holdout.outcome - scores[np.arange(holdout.n), holdout.arm]
    return float(np.std(residuals, ddof=1))


def _quantile_bins(scores: np.ndarray, unit_ids: Sequence[str], n_quantiles: int) -> np.ndarray:
    """Equal-count bin index per unit, ranking by (score, unit_id) so ties
    (common with binary covariates) resolve the same way every run."""
    n = len(scores)
    order = np.lexsort((np.asarray(unit_ids), scores))
    bins = np.empty(n, dtype=int)
    start = 0
    for b, chunk in enumerate(np.array_split(np.arange(n), n_quantiles)):
        bins[order[start : start + len(chunk)]] = b
        start += len(chunk)
    return bins


def estimate_sigma_rho(
    dataset: ExperimentDataset,
    split: TrainTestSplit,
    predictor: LinearTLearner,
    n_quantiles: int = 10,
) -> tuple[float, np.ndarray, float, dict]:
    """Stratified moment recovery on the holdout.

    Per arm a: score every holdout unit with arm a's predictor, cut into
    n_quantiles equal-count bins, and average the observed outcomes of the
    units actually assigned to a within each bin. The SD over bin means
    estimates sigma for that arm (reported sigma is the mean over arms).
    For rho, each unit carries, per arm, the bin mean of its predicted bin;
    rho for a pair of arms is the Pearson correlation of those carried
    values over units, and the headline rho averages all pairs.
    """
    if n_quantiles < 2:
        raise ConfigError(f"n_quantiles must be >= 2, got {n_quantiles}")
    holdout = dataset.subset(split.test_idx)
    scores = predictor.predict(holdout.x)
    uids = np.asarray(holdout.unit_ids)
    m = dataset.m
    bin_means = np.zeros((m, n_quantiles))
    bin_counts = np.zeros((m, n_quantiles), dtype=int)
    unit_values = np.zeros((holdout.n, m))
    thin_cells = []
    for a in range(m):
        bins = _quantile_bins(scores[:, a], uids, n_quantiles)
        assigned = holdout.arm == a
        for q in range(n_quantiles):
            cell = assigned & (bins == q)
            count = int(cell.sum())
            if count == 0:
                raise DomainError(
                    f"no units assigned to arm {dataset.arm_names[a]!r} fall in "
                    f"quantile bin {q}; cannot form the bin mean"
                )
            bin_counts[a, q] = count
            bin_means[a, q] = holdout.outcome[cell].mean()
            if count < 30:
                thin_cells.append((dataset.arm_names[a], q, count))
        unit_values[:, a] = bin_means[a, bins]
    if thin_cells:
        warnings.warn(
            f"{len(thin_cells)} (arm, quantile) cells hold fewer than 30 units "
            f"(first few: {thin_cells[:5]}); bin means are noisy",
            stacklevel=2,
        )
    per_arm_sigma = bin_means.std(axis=1, ddof=1)
    sigma_hat = float(per_arm_sigma.mean())
    rho = np.eye(m)
    for a in range(m):
        for b in range(a + 1, m):
            va, vb = unit_values[:, a], unit_values[:, b]
            if va.std() == 0.0 or vb.std() == 0.0:
                warnings.warn(
                    f"bin means for arm pair ({dataset.arm_names[a]}, "
                    f"{dataset.arm_names[b]}) are constant; reporting correlation 0",
                    stacklevel=2,
                )
                r = 0.0
            else:
                r = float(np.clip(np.corrcoef(va, vb)[0, 1], -1.0, 1.0))
            rho[a, b] = rho[b, a] = r
    iu = np.triu_indices(m, k=1)
    rho_mean = float(rho[iu].mean())
    diagnostics = {
        "n_quantiles": n_quantiles,
        "n_holdout": holdout.n,
        "per_arm_sigma": per_arm_sigma.tolist(),
        "bin_counts": bin_counts.tolist(),
        "bin_means": bin_means.tolist(),
    }
    return sigma_hat, rho, rho_mean, diagnostics


@dataclass(frozen=True)
class MomentEstimates:
    """Everything the gain model needs, estimated from one experiment."""

    s_hat: float
    sigma_hat: float
    rho_hat_matrix: np.ndarray
    rho_hat_mean: float
    sigma_eps_hat: float
    per_arm_means: np.ndarray
    quantile_diagnostics: dict = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho_hat_matrix", np.asarray(self.rho_hat_matrix, dtype=float))
        object.__setattr__(self, "per_arm_means", np.asarray(self.per_arm_means, dtype=float))
        rho = self.rho_hat_matrix
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DomainError("rho_hat_matrix must be square")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise DomainError("rho_hat_matrix must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise DomainError("rho_hat_matrix must have unit diagonal")
        if np.any(np.abs(rho) > 1.0 + 1e-12):
            raise DomainError("correlations must lie in [-1, 1]")
        for name in ("s_hat", "sigma_hat", "sigma_eps_hat"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        self.rho_hat_matrix.setflags(write=False)
        self.per_arm_means.setflags(write=False)

    def to_dict(self) -> dict:
        return {
            "s_hat": self.s_hat,
            "sigma_hat": self.sigma_hat,
            "rho_hat_matrix": self.rho_hat_matrix.tolist(),
            "rho_hat_mean": self.rho_hat_mean,
            "sigma_eps_hat": self.sigma_eps_hat,
            "per_arm_means": self.per_arm_means.tolist(),
            "quantile_diagnostics": self.quantile_diagnostics,
        }


def estimate_moments(
    dataset: ExperimentDataset, split: TrainTestSplit, n_quantiles: int = 10
) -> MomentEstimates:
    """Fit the predictor on the training side, then run every estimator.

    s and the per-arm means use the whole dataset (they need no model);
    sigma, rho and sigma_eps are holdout quantities.
    """
    predictor = fit_predictor(dataset, split)
    sigma_hat, rho_matrix, rho_mean, diagnostics = estimate_sigma_rho(
        dataset, split, predictor, n_quantiles
    )
    return MomentEstimates(
        s_hat=estimate_s(dataset),
        sigma_hat=sigma_hat,
        rho_hat_matrix=rho_matrix,
        rho_hat_mean=rho_mean,
        sigma_eps_hat=estimate_sigma_eps(dataset, split, predictor),
        per_arm_means=per_arm_means(dataset),
        quantile_diagnostics=diagnostics,
    )
