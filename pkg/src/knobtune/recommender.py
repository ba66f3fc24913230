"""End-to-end configuration recommendation.

A predictor maps workload features to a bucketed configuration. Two backends
satisfy the same port: an in-tree per-knob classifier (one 10-class bagged
tree model per knob over the 14-metric vector) and a remote sequence model
reached through a small completion protocol (request: {prompt, temperature,
n}; response: {completions: [text]}), whose outputs are parsed from
"knob: P1% to P2%" lines.

Inference is sampling-then-ranking: draw k bucketed candidates, decode each
bucket to its midpoint value, score all candidates with the cost model, and
return the best. Sampling takes an explicit random generator so concurrent
calls never share state.
"""

from __future__ import annotations

import json
import logging
import pickle
import re
import urllib.request
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .errors import DomainError, ParseError, StoreError
from .features import METRIC_NAMES, WorkloadFeatures
from .knobspace import (
    N_BUCKETS,
    BucketedConfiguration,
    Configuration,
    KnobSpace,
    bucket_to_value,
    normalize,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

PREDICTOR_FORMAT = "knobtune/predictor"
PREDICTOR_VERSION = 1

# ablation-grade bagged-tree settings for the per-knob classifiers
PER_KNOB_TREES = 1000
PER_KNOB_DEPTH = 50

DEFAULT_SAMPLE_COUNT = 8
DEFAULT_TEMPERATURE = 1.0


def soften(probabilities: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scale a distribution: p^(1/T) renormalized.

    T -> 0 collapses onto the argmax; zero-probability buckets stay zero.
    """
    p = np.asarray(probabilities, dtype=float)
    if temperature < 0:
        raise DomainError("temperature must be non-negative")
    if temperature < 1e-9:
        out = np.zeros_like(p)
        out[int(np.argmax(p))] = 1.0
        return out
    support = p > 0
    logp = np.full_like(p, -np.inf)
    logp[support] = np.log(p[support]) / temperature
    logp -= logp[support].max()
    w = np.exp(logp)
    return w / w.sum()


def sample_bucket(probabilities: np.ndarray, temperature: float,
                  rng: np.random.Generator) -> int:
    return int(rng.choice(N_BUCKETS, p=soften(probabilities, temperature)))


class _ConstantClassifier:
    """Stands in for a knob whose training labels were all one bucket."""

    def __init__(self, bucket: int):
        self.bucket = bucket

    def bucket_probabilities(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((len(X), N_BUCKETS))
        out[:, self.bucket] = 1.0
        return out


class _ForestClassifier:
    def __init__(self, model: RandomForestClassifier):
        self.model = model

    def bucket_probabilities(self, X: np.ndarray) -> np.ndarray:
        proba = self.model.predict_proba(X)
        out = np.zeros((len(X), N_BUCKETS))
        for col, cls in enumerate(self.model.classes_):
            out[:, int(cls)] = proba[:, col]
        return out


@dataclass
class PerKnobClassifier:
    """One 10-class classifier per knob over the 14-metric feature vector."""

    knob_names: list[str]
    classifiers: list
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.knob_names)

    def probability_table(self, feature_vector) -> np.ndarray:
        """(n_knobs, 10) bucket probabilities; each row sums to 1."""
        X = np.asarray(feature_vector, dtype=float).reshape(1, -1)
        if X.shape[1] != len(METRIC_NAMES):
            raise DomainError(f"feature vector length {X.shape[1]} != {len(METRIC_NAMES)}")
        table = np.vstack([c.bucket_probabilities(X)[0] for c in self.classifiers])
        if not np.allclose(table.sum(axis=1), 1.0, atol=1e-6):
            raise DomainError("per-knob probabilities do not sum to 1")
        return table

    def save(self, path) -> None:
        payload = {"format": PREDICTOR_FORMAT, "version": PREDICTOR_VERSION, "model": self}
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)


def load_predictor(path) -> "PerKnobClassifier":
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != PREDICTOR_FORMAT:
        raise StoreError(f"{path}: not a predictor dump")
    if payload.get("version") != PREDICTOR_VERSION:
        raise StoreError(f"{path}: predictor version {payload.get('version')} unsupported")
    return payload["model"]


def train_classifier(samples, space: KnobSpace, seed: int,
                     trees: int = PER_KNOB_TREES, depth: int = PER_KNOB_DEPTH,
                     min_samples: int = 50) -> PerKnobClassifier:
    """Fit the independent per-knob bucket classifiers."""
    if len(samples) < min_samples:
        raise DomainError(f"need at least {min_samples} training samples, got {len(samples)}")
    X = np.array([s.feature_vector for s in samples], dtype=float)
    classifiers = []
    for j, name in enumerate(space.names()):
        labels = np.array([s.label.buckets[j] for s in samples])
        distinct = set(int(b) for b in labels)
        if len(distinct) == 1:
            logger.info("knob %s: all labels in bucket %d, constant classifier", name, labels[0])
            classifiers.append(_ConstantClassifier(int(labels[0])))
            continue
        model = RandomForestClassifier(
            n_estimators=trees, max_depth=depth, n_jobs=1,
            random_state=derive_seed("per-knob", seed, name) % 2**32)
        model.fit(X, labels)
        classifiers.append(_ForestClassifier(model))
    return PerKnobClassifier(knob_names=space.names(), classifiers=classifiers,
                             metadata={"n_samples": len(samples), "trees": trees, "depth": depth})


class ClassifierPredictor:
    """Predictor port backed by the in-tree per-knob classifiers."""

    backend = "per_knob_classifier"

    def __init__(self, model: PerKnobClassifier):
        self.model = model

    def greedy(self, features: WorkloadFeatures) -> BucketedConfiguration:
        table = self.model.probability_table(features.vector)
        return BucketedConfiguration(tuple(int(np.argmax(row)) for row in table))

    def sample(self, features: WorkloadFeatures, temperature: float,
               rng: np.random.Generator) -> BucketedConfiguration:
        table = self.model.probability_table(features.vector)
        return BucketedConfiguration(
            tuple(sample_bucket(row, temperature, rng) for row in table))

    def sample_batch(self, features: WorkloadFeatures, temperature: float, k: int,
                     rng: np.random.Generator) -> list[BucketedConfiguration]:
        return [self.sample(features, temperature, rng) for _ in range(k)]


# --- remote backend -----------------------------------------------------------

_RANGE_LINE = re.compile(r"^\s*(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*:\s*(?P<lo>\d+)%\s*to\s*(?P<hi>\d+)%\s*$")


def render_lm_output(bcfg: BucketedConfiguration, space: KnobSpace) -> str:
    """Inverse of parse_lm_output: one 'knob: P1% to P2%' line per knob."""
    if len(bcfg.buckets) != space.n:
        raise DomainError("bucket vector length does not match space")
    return "\n".join(f"{name}: {b * 10}% to {(b + 1) * 10}%"
                     for name, b in zip(space.names(), bcfg.buckets))


def parse_lm_output(text: str, space: KnobSpace) -> BucketedConfiguration:
    """Parse decile-range lines into buckets.

    Order-insensitive; every knob must appear exactly once with a range of the
    form P% to (P+10)% where P is a multiple of 10 below 100.
    """
    if not text.strip():
        raise ParseError("empty predictor output")
    names = space.names()
    known = set(names)
    found: dict[str, int] = {}
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        m = _RANGE_LINE.match(line)
        if m is None:
            raise ParseError(f"malformed range line: {line!r}")
        name, lo, hi = m.group("name"), int(m.group("lo")), int(m.group("hi"))
        if name not in known:
            raise ParseError(f"unknown knob in line: {line!r}")
        if name in found:
            raise ParseError(f"duplicate knob in line: {line!r}")
        if lo % 10 != 0 or not 0 <= lo <= 90 or hi - lo != 10:
            raise ParseError(f"bad decile range in line: {line!r}")
        found[name] = lo // 10
    missing = [n for n in names if n not in found]
    if missing:
        raise ParseError(f"missing knobs in predictor output: {missing[:5]}")
    return BucketedConfiguration(tuple(found[n] for n in names))


def http_transport(url: str, timeout: float = 30.0, retries: int = 2):
    """POST-JSON transport for the remote predictor protocol."""

    def transport(request: dict) -> dict:
        body = json.dumps(request).encode("utf-8")
        last_error = None
        for attempt in range(retries + 1):
            try:
                req = urllib.request.Request(url, data=body,
                                             headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(req, timeout=timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except Exception as exc:  # retry transient transport failures
                last_error = exc
                logger.warning("remote predictor request failed (attempt %d): %s", attempt + 1, exc)
        raise ParseError(f"remote predictor unreachable after {retries + 1} attempts: {last_error}")

    return transport


class RemotePredictor:
    """Predictor port speaking the completion protocol over a transport."""

    backend = "remote_lm"

    def __init__(self, transport, space: KnobSpace):
        self.transport = transport
        self.space = space

    def _request(self, features: WorkloadFeatures, temperature: float, n: int) -> list[str]:
        response = self.transport({"prompt": features.text, "temperature": temperature, "n": n})
        completions = response.get("completions")
        if not isinstance(completions, list):
            raise ParseError(f"remote response missing completions: {response!r}")
        for completion in completions:
            logger.debug("remote completion: %r", completion)
        return completions

    def greedy(self, features: WorkloadFeatures) -> BucketedConfiguration:
        completions = self._request(features, 0.0, 1)
        if not completions:
            raise ParseError("remote returned no completions")
        return parse_lm_output(completions[0], self.space)

    def sample(self, features: WorkloadFeatures, temperature: float,
               rng=None) -> BucketedConfiguration:
        completions = self._request(features, temperature, 1)
        if not completions:
            raise ParseError("remote returned no completions")
        return parse_lm_output(completions[0], self.space)

    def sample_batch(self, features: WorkloadFeatures, temperature: float, k: int,
                     rng=None) -> list[BucketedConfiguration]:
        completions = self._request(features, temperature, k)
        parsed = []
        failures = []
        for text in completions:
            try:
                parsed.append(parse_lm_output(text, self.space))
            except ParseError as exc:
                failures.append(str(exc))
                logger.warning("unparseable remote completion: %s", exc)
        if not parsed:
            raise ParseError(f"all {len(completions)} completions unparseable: {failures[:3]}")
        return parsed


# --- sampling-then-ranking ------------------------------------------------------

@dataclass(frozen=True)
class Recommendation:
    configuration: Configuration
    predicted_score: float
    candidates: tuple[BucketedConfiguration, ...]
    scores: tuple[float, ...]


def recommend(features: WorkloadFeatures, predictor, cost_model, space: KnobSpace,
              k: int = DEFAULT_SAMPLE_COUNT, temperature: float = DEFAULT_TEMPERATURE,
              rng: np.random.Generator | None = None) -> Recommendation:
    """Draw k candidates, rank with the cost model, return the best decode.

    Ties break toward the earliest sample, so the result is a deterministic
    function of the drawn candidates.
    """
    if k < 1:
        raise DomainError("sample count k must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    candidates = predictor.sample_batch(features, temperature, k, rng)
    decoded = [bucket_to_value(space, b) for b in candidates]
    inputs = np.array([tuple(normalize(space, cfg).values) + tuple(features.vector)
                       for cfg in decoded])
    scores = cost_model.predict_batch(inputs)
    best = int(np.argmax(scores))
    return Recommendation(
        configuration=decoded[best],
        predicted_score=float(scores[best]),
        candidates=tuple(candidates),
        scores=tuple(float(s) for s in scores),
    )


def greedy_recommend(features: WorkloadFeatures, predictor, space: KnobSpace) -> Configuration:
    """Plain greedy decode, no sampling and no ranking."""
    return bucket_to_value(space, predictor.greedy(features))
