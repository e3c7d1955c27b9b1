import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import NSelectOutOfRange

METHODS = ("maxvol", "random", "popular", "cfecbf", "norm", "all")


@dataclass(frozen=True, eq=False)
class FeatureRanking:
    """Ordered feature indices; any prefix of ``order`` is a selected set.

    ``scores`` aligns with ``order``. MaxVol's square-phase features carry
    ``inf`` (serialized as ``null``).
    """

    order: np.ndarray
    scores: Optional[np.ndarray]
    method: str
    n_features: int

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.intp)
        if order.ndim != 1 or len(order) > self.n_features:
            raise ValueError("ranking longer than the feature space")
        if len(order) and (order.min() < 0 or order.max() >= self.n_features):
            raise ValueError("ranking index out of range")
        if len(np.unique(order)) != len(order):
            raise ValueError("ranking indices must be unique")
        object.__setattr__(self, "order", order)
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=np.float64)
            if scores.shape != order.shape:
                raise ValueError("scores must align with order")
            object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.order)

    def top(self, n: int) -> np.ndarray:
        if not 0 <= n <= len(self.order):
            raise NSelectOutOfRange(f"n={n} outside [0, {len(self.order)}]")
        return self.order[:n]

    def support(self, n: Optional[int] = None) -> np.ndarray:
        mask = np.zeros(self.n_features, dtype=bool)
        mask[self.top(len(self) if n is None else n)] = True
        return mask

    def to_dict(self):
        scores = None
        if self.scores is not None:
            scores = [None if not math.isfinite(s) else float(s) for s in self.scores]
        return {
            "method": self.method,
            "n_select": int(len(self.order)),
            "n_features": int(self.n_features),
            "order": [int(i) for i in self.order],
            "scores": scores,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d):
        scores = d.get("scores")
        if scores is not None:
            scores = [math.inf if s is None else s for s in scores]
        n_features = d.get("n_features", len(d["order"]))
        return cls(np.asarray(d["order"], dtype=np.intp), scores, d["method"], n_features)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def identity_ranking(n_features: int) -> FeatureRanking:
    return FeatureRanking(np.arange(n_features), None, "all", n_features)


def check_n_select(n_select, low, high):
    if int(n_select) != n_select or not low <= n_select <= high:
        raise NSelectOutOfRange(f"n_select={n_select} outside [{low}, {high}]")
    return int(n_select)


def argsort_desc(values) -> np.ndarray:
    """Indices sorting ``values`` nonincreasingly, ties by lowest index."""
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
