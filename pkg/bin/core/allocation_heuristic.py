#!/usr/bin/env python3
"""Channel allocation by polygon partition of the users.

Users are split into W groups of sizes X+1 (R' groups) and X (the rest), with
X = U div W and R' = U mod W; each group shares one channel. Among candidate
partitions the one with the largest nu = mean group perimeter / perimeter
variance wins: large, similar polygons mean co-channel users are far apart.
"""
import itertools
import logging
import math

import attrs
import numpy as np

log = logging.getLogger(__name__)

NU_EPSILON = 1e-9


@attrs.frozen(eq=False)
class PolygonPartition:
    groups: tuple[tuple[int, ...], ...]
    perimeters: tuple[float, ...]
    nu: float

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def mean_perimeter(self) -> float:
        return float(np.mean(self.perimeters))

    @property
    def variance(self) -> float:
        return float(np.var(self.perimeters))

    def channel_of(self, num_users: int) -> np.ndarray:
        out = np.full(num_users, -1, dtype=int)
        for j, group in enumerate(self.groups):
            out[list(group)] = j
        return out

    def channel_matrix(self, num_users: int, num_channels: int) -> np.ndarray:
        r = np.zeros((num_users, num_channels), dtype=np.int8)
        r[np.arange(num_users), self.channel_of(num_users)] = 1
        return r


def size_profile(U: int, W: int) -> tuple[int, ...]:
    X, extra = divmod(U, W)
    return (X + 1,) * extra + (X,) * (W - extra)


def polygon_perimeter(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) <= 1:
        return 0.0
    if len(pts) == 2:
        return 2.0 * float(np.hypot(*(pts[0] - pts[1])))
    rel = pts - pts.mean(axis=0)
    order = np.lexsort((np.hypot(rel[:, 0], rel[:, 1]), np.arctan2(rel[:, 1], rel[:, 0])))
    ring = pts[order]
    edges = np.roll(ring, -1, axis=0) - ring
    return float(np.hypot(edges[:, 0], edges[:, 1]).sum())


def partition_nu(perimeters) -> float:
    p = np.asarray(perimeters, dtype=float)
    return float(p.mean() / (p.var() + NU_EPSILON))


def canonical(groups) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted((tuple(sorted(int(i) for i in g)) for g in groups), key=lambda g: g[0]))


def partition_count(sizes) -> int:
    count = math.factorial(sum(sizes))
    for s in sizes:
        count //= math.factorial(s)
    for _size, same in itertools.groupby(sorted(sizes)):
        count //= math.factorial(len(list(same)))
    return count


def enumerate_partitions(elements, sizes):
    """Every partition of `elements` into blocks with the given size multiset, each exactly once."""
    elements = tuple(elements)
    if not elements:
        yield ()
        return
    head, rest = elements[0], elements[1:]
    for size in sorted(set(sizes), reverse=True):
        remaining = list(sizes)
        remaining.remove(size)
        for mates in itertools.combinations(rest, size - 1):
            block = (head,) + mates
            left = tuple(e for e in rest if e not in mates)
            for tail in enumerate_partitions(left, remaining):
                yield (block,) + tail


def random_partition(rng: np.random.Generator, U: int, sizes) -> tuple[tuple[int, ...], ...]:
    perm = rng.permutation(U)
    cuts = np.cumsum(sizes)[:-1]
    return canonical(np.split(perm, cuts))


def dispersed_partition(points: np.ndarray, sizes) -> tuple[tuple[int, ...], ...]:
    """Deal users round-robin in angular order, so every group spans the whole cell."""
    rel = points - points.mean(axis=0)
    order = np.lexsort((np.hypot(rel[:, 0], rel[:, 1]), np.arctan2(rel[:, 1], rel[:, 0])))
    groups = [[] for _ in sizes]
    slot = 0
    for user in order:
        while len(groups[slot % len(sizes)]) >= sizes[slot % len(sizes)]:
            slot += 1
        groups[slot % len(sizes)].append(int(user))
        slot += 1
    return canonical(groups)


def evaluate_partition(points: np.ndarray, groups) -> PolygonPartition:
    perims = tuple(polygon_perimeter(points[list(g)]) for g in groups)
    return PolygonPartition(groups=tuple(groups), perimeters=perims, nu=partition_nu(perims))


def candidate_partitions(points: np.ndarray, sizes, max_enumeration: int = 10_000,
                         samples: int = 10_000, seed: int = 0):
    U = len(points)
    if partition_count(sizes) <= max_enumeration:
        yield from (canonical(p) for p in enumerate_partitions(range(U), sizes))
        return
    yield dispersed_partition(points, sizes)
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        yield random_partition(rng, U, sizes)


def best_partition(points, W: int, max_enumeration: int = 10_000, samples: int = 10_000,
                   seed: int = 0) -> PolygonPartition:
    points = np.asarray(points, dtype=float)
    U = len(points)
    if U < 1 or W < 1:
        raise ValueError(f"need U >= 1 and W >= 1, got U={U}, W={W}")
    if W >= U:
        groups = tuple((u,) for u in range(U))
        return evaluate_partition(points, groups)
    sizes = size_profile(U, W)
    best = None
    seen = 0
    for groups in candidate_partitions(points, sizes, max_enumeration, samples, seed):
        seen += 1
        cand = evaluate_partition(points, groups)
        if best is None or cand.nu > best.nu:
            best = cand
    log.info("channel partition sizes=%s nu=%.4g (mean perimeter %.1f m) over %d candidates",
             best.sizes, best.nu, best.mean_perimeter, seen)
    return best


def allocate_channels(instance, max_enumeration: int = 10_000, samples: int = 10_000, seed: int = 0) -> np.ndarray:
    """U x W channel matrix; one dedicated channel per user whenever W >= U."""
    W = instance.params.W
    points = instance.positions[instance.user_nodes()]
    partition = best_partition(points, W, max_enumeration, samples, seed)
    return partition.channel_matrix(instance.num_users, W)


def allocate_from_config(instance, cfg: dict, seed: int = 0) -> np.ndarray:
    a = dict(cfg.get("allocation") or {})
    return allocate_channels(instance, a.get("max_enumeration", 10_000), a.get("samples", 10_000), seed)
