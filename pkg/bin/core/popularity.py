#!/usr/bin/env python3
"""Per-class Zipf popularity and probabilistic user-class membership.

Indices are zero-based (file f, class k, user u); the only exception is
default_class_probs, whose mod-K rule is stated on one-based user numbers.
"""
import attrs
import numpy as np

from errors import ConfigError

DEFAULT_CLASS_VECTORS = (
    (0.3, 0.5, 0.2),  # u mod 3 == 0
    (0.2, 0.3, 0.5),  # u mod 3 == 1
    (0.5, 0.2, 0.3),  # u mod 3 == 2
)


def default_class_probs(u: int, K: int = 3, matrix=None) -> np.ndarray:
    if matrix is not None:
        rows = np.asarray(matrix, dtype=float)
        if not 1 <= u <= rows.shape[0]:
            raise ConfigError(f"user number {u} outside class matrix with {rows.shape[0]} rows")
        return rows[u - 1].copy()
    if K != 3:
        raise ConfigError(f"no built-in class vectors for K={K}; supply an explicit class matrix")
    return np.array(DEFAULT_CLASS_VECTORS[u % 3])


def zipf_weights(ranks: np.ndarray, beta: float) -> np.ndarray:
    w = np.asarray(ranks, dtype=float) ** (-float(beta))
    return w / w.sum(axis=0, keepdims=True)


@attrs.frozen(eq=False)
class PopularityModel:
    beta: float = attrs.field(converter=float)
    ranks: np.ndarray = attrs.field(repr=False)
    class_probs: np.ndarray = attrs.field(repr=False)
    distinct_ranks: bool = True
    _q: np.ndarray = attrs.field(init=False, repr=False)
    _Q: np.ndarray = attrs.field(init=False, repr=False)

    def __attrs_post_init__(self):
        ranks = np.array(self.ranks, dtype=int, copy=True)
        probs = np.array(self.class_probs, dtype=float, copy=True)
        if self.beta < 0:
            raise ConfigError(f"Zipf exponent must be >= 0, got {self.beta}")
        if ranks.ndim != 2 or probs.ndim != 2 or ranks.shape[1] != probs.shape[1]:
            raise ConfigError(f"rank matrix {ranks.shape} and class matrix {probs.shape} disagree on K")
        F = ranks.shape[0]
        expected = np.arange(1, F + 1)
        for k in range(ranks.shape[1]):
            if not np.array_equal(np.sort(ranks[:, k]), expected):
                raise ConfigError(f"ranks of class {k} are not a permutation of 1..{F}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("class membership rows must be non-negative and sum to 1")
        q = zipf_weights(ranks, self.beta)
        for arr in (ranks, probs, q):
            arr.setflags(write=False)
        Q = probs @ q.T
        Q.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "class_probs", probs)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_Q", Q)

    @property
    def num_files(self) -> int:
        return self.ranks.shape[0]

    @property
    def num_classes(self) -> int:
        return self.ranks.shape[1]

    @property
    def num_users(self) -> int:
        return self.class_probs.shape[0]

    @property
    def q(self) -> np.ndarray:
        """q[f, k]: Zipf probability of file f within class k."""
        return self._q

    @property
    def Q(self) -> np.ndarray:
        """Q[u, f] = sum_k p_u^k q_f^k."""
        return self._Q

    def zipf_prob(self, f: int, k: int) -> float:
        if not (0 <= f < self.num_files and 0 <= k < self.num_classes):
            raise IndexError(f"(f={f}, k={k}) outside F={self.num_files}, K={self.num_classes}")
        return float(self._q[f, k])

    def averaged_popularity(self, u: int, f: int) -> float:
        if not (0 <= u < self.num_users and 0 <= f < self.num_files):
            raise IndexError(f"(u={u}, f={f}) outside U={self.num_users}, F={self.num_files}")
        return float(self._Q[u, f])

    def file_metric(self, f: int) -> float:
        if not 0 <= f < self.num_files:
            raise IndexError(f"file {f} outside F={self.num_files}")
        return float(self._Q[:, f].sum())

    def file_metrics(self) -> np.ndarray:
        return self._Q.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "distinct_ranks": self.distinct_ranks,
            "ranks": self.ranks.tolist(),
            "class_probs": self.class_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PopularityModel":
        return cls(beta=doc["beta"], ranks=np.array(doc["ranks"]), class_probs=np.array(doc["class_probs"]),
                   distinct_ranks=bool(doc.get("distinct_ranks", True)))


def build_popularity(U: int, F: int, K: int = 3, beta: float = 2.0, seed: int = 0,
                     distinct_ranks: bool = True, class_probs=None, ranks=None) -> PopularityModel:
    if ranks is None:
        if distinct_ranks:
            rng = np.random.default_rng(seed)
            ranks = np.stack([rng.permutation(F) + 1 for _ in range(K)], axis=1)
        else:
            ranks = np.tile(np.arange(1, F + 1)[:, None], (1, K))
    if class_probs is None:
        class_probs = np.stack([default_class_probs(u + 1, K) for u in range(U)])
    else:
        class_probs = np.asarray(class_probs, dtype=float)
        if class_probs.shape[0] != U:
            # a short explicit matrix is reused cyclically, like the built-in mod-K rule
            class_probs = np.stack([class_probs[u % class_probs.shape[0]] for u in range(U)])
    return PopularityModel(beta=beta, ranks=ranks, class_probs=class_probs, distinct_ranks=distinct_ranks)
