"""Iterative knob tuners: Bayesian optimization plus baselines.

The BO tuner fits a random-forest surrogate on the trial history and picks
the candidate maximizing Expected Improvement; candidates mix uniform draws
with Gaussian perturbations of the best incumbents. The first ceil(budget/5)
trials are space-filling initialization. Evaluators are pluggable: an
environment-backed evaluator replays the workload, a cost-model evaluator
predicts instead, which is what makes bulk label collection cheap (zero
replays inside the loop, one verification run at the end).

All internal scores are oriented higher-is-better; latency evaluators negate.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .env import OLTP_STRESS_SECONDS, oriented_score
from .errors import DomainError, TuningError
from .features import Workload
from .knobspace import Configuration, KnobSpace, NormalizedConfiguration, denormalize, normalize
from .seeding import derive_seed
from .stores import write_store

logger = logging.getLogger(__name__)

HISTORY_FORMAT = "knobtune/tuning-history"

N_UNIFORM_CANDIDATES = 500
N_PERTURB_CANDIDATES = 100
PERTURB_SIGMA = 0.1
TOP_INCUMBENTS = 5


@dataclass
class TuningTask:
    space: KnobSpace
    workload_id: str
    evaluator: object  # callable Configuration -> higher-better score
    budget: int
    orientation: str = "higher_better"

    def __post_init__(self):
        if self.budget < 1:
            raise DomainError(f"budget {self.budget} must be >= 1")


@dataclass(frozen=True)
class Trial:
    iteration: int
    configuration: Configuration
    score: float | None
    elapsed_s: float
    failed: bool = False


@dataclass
class TuningHistory:
    trials: list[Trial] = field(default_factory=list)
    incumbents: list[tuple[Configuration, float]] = field(default_factory=list)

    def record(self, trial: Trial) -> None:
        self.trials.append(trial)
        if trial.failed:
            if self.incumbents:
                self.incumbents.append(self.incumbents[-1])
            return
        if not self.incumbents or trial.score > self.incumbents[-1][1]:
            self.incumbents.append((trial.configuration, trial.score))
        else:
            self.incumbents.append(self.incumbents[-1])

    def best(self) -> tuple[Configuration, float]:
        if not self.incumbents:
            raise TuningError("no successful trials")
        return self.incumbents[-1]

    def export(self, path, space: KnobSpace) -> None:
        records = [{
            "iteration": t.iteration,
            "config": None if t.failed else t.configuration.as_dict(space),
            "score": t.score,
            "elapsed_s": t.elapsed_s,
            "failed": t.failed,
        } for t in self.trials]
        write_store(path, HISTORY_FORMAT, records)


class EnvEvaluator:
    """Score configurations by replaying the workload in an environment.

    Tracks how many replays ran and the simulated wall time they would cost
    (full latency per OLAP replay, a 1-minute stress test per OLTP run).
    """

    def __init__(self, env, workload: Workload):
        self.env = env
        self.workload = workload
        self.calls = 0
        self.simulated_seconds = 0.0

    def __call__(self, cfg: Configuration) -> float:
        perf, _ = self.env.evaluate(self.workload, cfg)
        self.calls += 1
        self.simulated_seconds += (perf.value if perf.orientation == "lower_better"
                                   else OLTP_STRESS_SECONDS)
        return oriented_score(perf)

    @property
    def elapsed_seconds(self) -> float:
        return self.simulated_seconds


class CostModelEvaluator:
    """Score configurations with the learned cost model (no replays)."""

    def __init__(self, model, space: KnobSpace, feature_vector):
        self.model = model
        self.space = space
        self.feature_vector = tuple(float(v) for v in feature_vector)
        self.calls = 0

    def _input(self, cfg: Configuration) -> np.ndarray:
        ncfg = normalize(self.space, cfg)
        return np.array(tuple(ncfg.values) + self.feature_vector)

    def __call__(self, cfg: Configuration) -> float:
        self.calls += 1
        return self.model.predict(self._input(cfg))

    @property
    def elapsed_seconds(self) -> float:
        return 0.0  # model predictions cost no replay time


def _norm_phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _norm_cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    """EI for maximization from surrogate mean/std; zero-variance points fall
    back to plain improvement."""
    improve = mean - best
    ei = np.maximum(improve, 0.0)
    positive = std > 0
    if np.any(positive):
        z = improve[positive] / std[positive]
        ei[positive] = improve[positive] * _norm_cdf(z) + std[positive] * _norm_phi(z)
    return ei


def _elapsed(evaluator, t0: float) -> float:
    sim = getattr(evaluator, "elapsed_seconds", None)
    return float(sim) if sim is not None else time.perf_counter() - t0


def _run_trial(task: TuningTask, history: TuningHistory, iteration: int,
               cfg: Configuration, t0: float) -> None:
    try:
        score = float(task.evaluator(cfg))
    except Exception as exc:  # evaluator failures skip the trial, not the run
        logger.warning("trial %d failed: %s", iteration, exc)
        history.record(Trial(iteration, cfg, None, _elapsed(task.evaluator, t0), failed=True))
        return
    history.record(Trial(iteration, cfg, score, _elapsed(task.evaluator, t0)))


def lhs_sample(space: KnobSpace, n: int, seed: int) -> list[Configuration]:
    """Latin hypercube: per dimension the n samples occupy all n strata once."""
    if n < 1:
        raise DomainError("lhs sample count must be >= 1")
    rng = np.random.default_rng(derive_seed("lhs", seed) % 2**32)
    X = np.empty((n, space.n))
    for j in range(space.n):
        strata = rng.permutation(n)
        X[:, j] = (strata + rng.uniform(0.0, 1.0, size=n)) / n
    X = np.clip(X, 0.0, 1.0)
    return [denormalize(space, NormalizedConfiguration(tuple(float(v) for v in row)))
            for row in X]


def _fit_surrogate(X: np.ndarray, y: np.ndarray, seed: int) -> RandomForestRegressor:
    rf = RandomForestRegressor(n_estimators=100, min_samples_leaf=1, n_jobs=1,
                               random_state=seed % 2**32)
    rf.fit(X, y)
    return rf


def _surrogate_mean_std(rf: RandomForestRegressor, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    per_tree = np.stack([tree.predict(X) for tree in rf.estimators_])
    return per_tree.mean(axis=0), per_tree.std(axis=0)


def _candidates(rng, X_hist: np.ndarray, y_hist: np.ndarray, dim: int) -> np.ndarray:
    uniform = rng.uniform(0.0, 1.0, size=(N_UNIFORM_CANDIDATES, dim))
    order = np.argsort(-y_hist)[:TOP_INCUMBENTS]
    tops = X_hist[order]
    seeds = tops[np.arange(N_PERTURB_CANDIDATES) % len(tops)]
    perturbed = np.clip(seeds + rng.normal(0.0, PERTURB_SIGMA, size=seeds.shape), 0.0, 1.0)
    return np.vstack([uniform, perturbed])


def tune(task: TuningTask, seed: int) -> tuple[Configuration, TuningHistory]:
    """Bayesian-optimization loop; returns the incumbent and full history."""
    space = task.space
    history = TuningHistory()
    rng = np.random.default_rng(derive_seed("tune", seed) % 2**32)
    n_init = min(task.budget, math.ceil(task.budget / 5))
    t0 = time.perf_counter()

    for i, cfg in enumerate(lhs_sample(space, n_init, derive_seed("tune-init", seed))):
        _run_trial(task, history, i, cfg, t0)

    for i in range(n_init, task.budget):
        ok = [t for t in history.trials if not t.failed]
        if len(ok) < 2:
            row = rng.uniform(0.0, 1.0, size=space.n)
            cfg = denormalize(space, NormalizedConfiguration(tuple(float(v) for v in row)))
            _run_trial(task, history, i, cfg, t0)
            continue
        X_hist = np.array([normalize(space, t.configuration).values for t in ok])
        y_hist = np.array([t.score for t in ok])
        rf = _fit_surrogate(X_hist, y_hist, derive_seed("tune-surrogate", seed, i))
        cand = _candidates(rng, X_hist, y_hist, space.n)
        mean, std = _surrogate_mean_std(rf, cand)
        ei = expected_improvement(mean, std, float(y_hist.max()))
        pick = int(np.argmax(ei))  # ties break to the earliest candidate
        cfg = denormalize(space, NormalizedConfiguration(tuple(float(v) for v in cand[pick])))
        _run_trial(task, history, i, cfg, t0)

    if not any(not t.failed for t in history.trials):
        raise TuningError(f"all {task.budget} trials failed for {task.workload_id!r}")
    best_cfg, _ = history.best()
    return best_cfg, history


def random_search(task: TuningTask, seed: int) -> tuple[Configuration, TuningHistory]:
    """Uniform sampling in normalized space; incumbent tracking only."""
    history = TuningHistory()
    rng = np.random.default_rng(derive_seed("random-search", seed) % 2**32)
    t0 = time.perf_counter()
    for i in range(task.budget):
        row = rng.uniform(0.0, 1.0, size=task.space.n)
        cfg = denormalize(task.space, NormalizedConfiguration(tuple(float(v) for v in row)))
        _run_trial(task, history, i, cfg, t0)
    if not any(not t.failed for t in history.trials):
        raise TuningError(f"all {task.budget} trials failed for {task.workload_id!r}")
    best_cfg, _ = history.best()
    return best_cfg, history


def verify_against_default(env, workload: Workload, cfg: Configuration):
    """One verification replay: does cfg strictly beat the published default?

    Returns (improved, tuned_perf, default_perf). The default reading is the
    environment's stored baseline, so exactly one evaluation runs here.
    """
    tuned_perf, _ = env.evaluate(workload, cfg)
    default_perf = env.baseline(workload)
    return oriented_score(tuned_perf) > oriented_score(default_perf), tuned_perf, default_perf
