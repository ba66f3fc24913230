"""Learned performance estimator that stands in for real executions.

Two tree ensembles, a gradient-boosted regressor and a random forest, are
trained on identical samples; inference averages their predictions. Inputs
concatenate the normalized configuration with the 14-component workload
metric vector. Targets are performance normalized per workload (after
orienting so that higher is better), which sidesteps cross-workload scale
differences and lets one global model rank configurations within any
workload.
"""

from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor

from .env import Observation, oriented_score
from .errors import DomainError, StoreError
from .features import METRIC_NAMES
from .knobspace import KnobSpace, normalize
from .seeding import derive_seed

logger = logging.getLogger(__name__)

MIN_TRAIN_SAMPLES = 50

MODEL_FORMAT = "knobtune/cost-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CostSample:
    """One training record: input vector, per-workload-normalized target."""

    input: tuple[float, ...]
    target: float
    workload_id: str
    orientation: str

    def __post_init__(self):
        if not 0.0 <= self.target <= 1.0:
            raise DomainError(f"cost sample target {self.target} outside [0,1]")


@dataclass
class CostHyperparams:
    boosted_trees: int = 200
    boosted_depth: int = 6
    learning_rate: float = 0.1
    bagged_trees: int = 300
    bagged_depth: int = 12
    seed: int = 0


@dataclass
class CostModel:
    boosted: object
    bagged: object
    input_dim: int
    hyperparams: CostHyperparams
    metadata: dict = field(default_factory=dict)

    def _check_dim(self, X: np.ndarray) -> None:
        if X.shape[1] != self.input_dim:
            raise DomainError(f"input dim {X.shape[1]} != model dim {self.input_dim}")

    def member_predictions(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_dim(X)
        return np.asarray(self.boosted.predict(X)), np.asarray(self.bagged.predict(X))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Ensemble mean of both members, clamped to [0,1]."""
        b, r = self.member_predictions(X)
        return np.clip((b + r) / 2.0, 0.0, 1.0)

    def predict(self, x) -> float:
        return float(self.predict_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def save(self, path) -> None:
        payload = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": self}
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)


def load_cost_model(path) -> CostModel:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise StoreError(f"{path}: not a cost model dump")
    if payload.get("version") != MODEL_VERSION:
        raise StoreError(f"{path}: cost model version {payload.get('version')} unsupported")
    return payload["model"]


def normalize_perf(observations: list[Observation], space: KnobSpace,
                   features_by_workload: dict) -> list[CostSample]:
    """Turn raw observations into cost samples.

    Performance is oriented so higher is better (latency negated), then
    min-max normalized within each workload; the best configuration of a
    workload maps to 1.0. Degenerate groups (single observation, or all
    readings equal) map to 0.5.
    """
    groups: dict[str, list[Observation]] = {}
    for obs in observations:
        groups.setdefault(obs.workload_id, []).append(obs)

    samples: list[CostSample] = []
    for wid, group in groups.items():
        if wid not in features_by_workload:
            raise DomainError(f"no feature vector for workload {wid!r}")
        feature_vec = tuple(float(v) for v in features_by_workload[wid])
        if len(feature_vec) != len(METRIC_NAMES):
            raise DomainError(f"workload {wid!r}: feature vector length {len(feature_vec)}")
        scores = np.array([oriented_score(o.perf) for o in group])
        lo, hi = scores.min(), scores.max()
        if len(group) == 1:
            logger.warning("workload %s has a single observation; target set to 0.5", wid)
            targets = np.array([0.5])
        elif hi == lo:
            targets = np.full(len(group), 0.5)
        else:
            targets = (scores - lo) / (hi - lo)
        for obs, target in zip(group, targets):
            ncfg = normalize(space, obs.configuration)
            samples.append(CostSample(
                input=tuple(ncfg.values) + feature_vec,
                target=float(target),
                workload_id=wid,
                orientation=group[0].perf.orientation,
            ))
    return samples


def _as_matrix(samples: list[CostSample]) -> tuple[np.ndarray, np.ndarray]:
    dims = {len(s.input) for s in samples}
    if len(dims) != 1:
        raise DomainError(f"inconsistent sample input dims: {sorted(dims)}")
    X = np.array([s.input for s in samples], dtype=float)
    y = np.array([s.target for s in samples], dtype=float)
    return X, y


def train(samples: list[CostSample], hyperparams: CostHyperparams | None = None,
          min_samples: int = MIN_TRAIN_SAMPLES) -> CostModel:
    """Fit both ensemble members on the full sample set."""
    if len(samples) < min_samples:
        raise DomainError(f"need at least {min_samples} samples, got {len(samples)}")
    hp = hyperparams or CostHyperparams()
    X, y = _as_matrix(samples)
    boosted = GradientBoostingRegressor(
        n_estimators=hp.boosted_trees, max_depth=hp.boosted_depth,
        learning_rate=hp.learning_rate, loss="squared_error",
        random_state=derive_seed("cost-boosted", hp.seed) % 2**32)
    bagged = RandomForestRegressor(
        n_estimators=hp.bagged_trees, max_depth=hp.bagged_depth,
        max_features="sqrt", n_jobs=1,
        random_state=derive_seed("cost-bagged", hp.seed) % 2**32)
    boosted.fit(X, y)
    bagged.fit(X, y)
    return CostModel(boosted=boosted, bagged=bagged, input_dim=X.shape[1], hyperparams=hp,
                     metadata={"n_samples": len(samples),
                               "n_workloads": len({s.workload_id for s in samples})})


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination against the observed mean."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


@dataclass
class CrossValidationReport:
    fold_r2: list[float]
    mean_r2: float
    per_workload_spearman: dict
    mean_spearman: float


def cross_validate(samples: list[CostSample], k: int = 10, seed: int = 0,
                   hyperparams: CostHyperparams | None = None) -> CrossValidationReport:
    """K-fold cross-validation with folds split by workload.

    No workload's samples ever straddle the train/test boundary of a fold.
    Reports per-fold R^2 plus the Spearman rank correlation of predicted vs
    observed targets within each held-out workload.
    """
    workload_ids = sorted({s.workload_id for s in samples})
    if k > len(workload_ids):
        raise DomainError(f"k={k} exceeds distinct workload count {len(workload_ids)}")
    rng = np.random.default_rng(derive_seed("cost-cv", seed) % 2**32)
    order = list(rng.permutation(workload_ids))
    folds = [set(chunk) for chunk in np.array_split(np.array(order, dtype=object), k)]

    by_workload: dict[str, list[CostSample]] = {}
    for s in samples:
        by_workload.setdefault(s.workload_id, []).append(s)

    fold_r2 = []
    per_workload_spearman = {}
    hp = hyperparams or CostHyperparams()
    for fold_idx, held_out in enumerate(folds):
        train_samples = [s for s in samples if s.workload_id not in held_out]
        test_samples = [s for s in samples if s.workload_id in held_out]
        model = train(train_samples, hp, min_samples=2)
        X_test, y_test = _as_matrix(test_samples)
        preds = model.predict_batch(X_test)
        fold_r2.append(r_squared(y_test, preds))
        for wid in sorted(held_out):
            group = by_workload[wid]
            if len(group) < 3:
                continue
            Xw, yw = _as_matrix(group)
            rho = stats.spearmanr(yw, model.predict_batch(Xw)).statistic
            if not np.isnan(rho):
                per_workload_spearman[wid] = float(rho)
    mean_spearman = (float(np.mean(list(per_workload_spearman.values())))
                     if per_workload_spearman else 0.0)
    return CrossValidationReport(
        fold_r2=[float(v) for v in fold_r2],
        mean_r2=float(np.mean(fold_r2)),
        per_workload_spearman=per_workload_spearman,
        mean_spearman=mean_spearman,
    )
