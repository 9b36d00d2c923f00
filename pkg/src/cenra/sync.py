"""Sampling weights that decide how many CRA samples come from each task.

Similarity weights favour tasks whose recent policy features sit far from
the centroid of all tasks; performance weights favour tasks whose recent
environmental reward is low. Both use a softmax over floored reciprocals.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import numpy as np

from .errors import ConfigurationError, NotReady

DEFAULT_FLOOR = 1e-6


@dataclass
class WeightConfig:
    alpha: float = 0.5
    K: int = 100
    floor_epsilon: float = DEFAULT_FLOOR

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if self.floor_epsilon <= 0:
            raise ConfigurationError("floor_epsilon must be positive")


class FeatureWindow:
    """The last K hidden-feature vectors of one task.

    Keeps a running sum; it is rebuilt from the stored vectors every K
    appends so rounding error cannot accumulate.
    """

    def __init__(self, K: int):
        self.K = K
        self._items: deque[np.ndarray] = deque(maxlen=K)
        self._sum: np.ndarray | None = None
        self._since_rebuild = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, feature) -> None:
        feature = np.array(feature, dtype=np.float64)
        evicted = self._items[0] if len(self._items) == self.K else None
        self._items.append(feature)
        self._since_rebuild += 1
        if self._sum is None or self._since_rebuild >= self.K:
            self._sum = np.sum(np.stack(self._items), axis=0)
            self._since_rebuild = 0
        else:
            self._sum = self._sum + feature
            if evicted is not None:
                self._sum = self._sum - evicted

    def mean(self) -> np.ndarray:
        if not self._items:
            raise NotReady("feature window is empty")
        return self._sum / len(self._items)


class ReturnWindow:
    """The last K environmental rewards of one task."""

    def __init__(self, K: int):
        self.K = K
        self._items: deque[float] = deque(maxlen=K)

    def __len__(self) -> int:
        return len(self._items)

    def append(self, r_env: float) -> None:
        self._items.append(float(r_env))

    def tail_mean(self) -> float:
        if not self._items:
            raise NotReady("return window is empty")
        return float(np.mean(self._items))


def stable_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    w = e / e.sum()
    if (w == 0).any():
        # floored logits (1/eps) can underflow the other entries to exactly 0
        w = np.maximum(w, np.finfo(np.float64).tiny)
        w = w / w.sum()
    return w


def _means(windows) -> np.ndarray:
    means = []
    for w in windows:
        means.append(w.mean() if isinstance(w, FeatureWindow) else np.asarray(w, dtype=np.float64))
    return np.stack(means)


def similarity_scores(features) -> np.ndarray:
    """Scaled dot products of each task's mean feature with the centroid."""
    H = _means(features)
    if H.ndim != 2:
        raise ConfigurationError("features must be one vector per task")
    c = H.mean(axis=0)
    return H @ c / np.sqrt(H.shape[1])


def similarity_weights(features, floor_epsilon: float = DEFAULT_FLOOR) -> np.ndarray:
    """``features`` is a sequence of ``FeatureWindow`` or of mean vectors."""
    s = np.maximum(similarity_scores(features), floor_epsilon)
    return stable_softmax(1.0 / s)


def performance_weights(returns, floor_epsilon: float = DEFAULT_FLOOR) -> np.ndarray:
    """``returns`` is a sequence of ``ReturnWindow`` or of tail means."""
    tails = np.array([r.tail_mean() if isinstance(r, ReturnWindow) else float(r) for r in returns])
    return stable_softmax(1.0 / np.maximum(tails, floor_epsilon))


def combine(w_sim, w_per, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * np.asarray(w_sim, dtype=np.float64) + (1.0 - alpha) * np.asarray(w_per, dtype=np.float64)


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass
class WeightSnapshot:
    w_sim: np.ndarray
    w_per: np.ndarray
    w: np.ndarray
    warm: bool  # False while falling back to uniform


class Synchronizer:
    """Per-task feature/return windows and the combined sampling weight.

    ``mode`` selects the ablation: ``both`` (default), ``sim`` (similarity
    only), ``per`` (performance only) or ``none`` (uniform).
    """

    MODES = ("both", "sim", "per", "none")

    def __init__(self, n_tasks: int, config: WeightConfig | None = None, mode: str = "both"):
        self.config = config or WeightConfig()
        self.config.validate()
        if mode not in self.MODES:
            raise ConfigurationError(f"unknown weight mode {mode!r}")
        self.mode = mode
        self.n_tasks = n_tasks
        self.features = [FeatureWindow(self.config.K) for _ in range(n_tasks)]
        self.returns = [ReturnWindow(self.config.K) for _ in range(n_tasks)]

    def record(self, task_id: int, feature, r_env: float) -> None:
        self.features[task_id].append(feature)
        self.returns[task_id].append(r_env)

    def ready(self) -> bool:
        return all(len(f) for f in self.features) and all(len(r) for r in self.returns)

    def weights(self, allow: bool = True) -> WeightSnapshot:
        """Current sampling weight; uniform until ``allow`` and all windows hold data."""
        n = self.n_tasks
        u = uniform(n)
        if not allow or not self.ready():
            return WeightSnapshot(u, u, u, False)
        eps = self.config.floor_epsilon
        w_sim = similarity_weights(self.features, eps)
        w_per = performance_weights(self.returns, eps)
        if self.mode == "both":
            w = combine(w_sim, w_per, self.config.alpha)
        elif self.mode == "sim":
            w = w_sim
        elif self.mode == "per":
            w = w_per
        else:
            w = u
        return WeightSnapshot(w_sim, w_per, w, True)
