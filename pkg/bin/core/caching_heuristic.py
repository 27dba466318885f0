#!/usr/bin/env python3
"""Greedy popularity-ranked file placement on top of a fixed channel allocation.

Files are visited by decreasing total request probability. Each one is tried
at every node with spare cache space and placed where it maximises the share
of its requests delivered within D_th, given everything placed so far.
Equal shares go to the node nearest the network edge (UE, then SBS, then MBS),
then to the lowest node index.
"""
import logging
import math
import time

import attrs
import numpy as np

from allocation_heuristic import allocate_from_config
from delivery_delay import NO_HOLDER, Assignment, DeliveryContext, require_feasible

log = logging.getLogger(__name__)

# objectives within these tolerances are ties
TIE_REL_TOL = 1e-9
TIE_ABS_TOL = 1e-12


@attrs.frozen
class PlacementStep:
    file: int
    node: int
    objective: float
    fallback: bool = False


@attrs.frozen(eq=False)
class PlacementResult:
    holders: np.ndarray = attrs.field(repr=False)
    trace: tuple[PlacementStep, ...] = attrs.field(repr=False)
    num_nodes: int

    @property
    def caching(self) -> np.ndarray:
        c = np.zeros((self.num_nodes, self.holders.size), dtype=np.int8)
        placed = self.holders != NO_HOLDER
        c[self.holders[placed], np.flatnonzero(placed)] = 1
        return c

    @property
    def fallbacks(self) -> int:
        return sum(1 for s in self.trace if s.fallback)


@attrs.frozen(eq=False)
class Solution:
    method: str
    assignment: Assignment
    sdr: float
    delays: np.ndarray = attrs.field(repr=False)
    runtime_s: float = 0.0
    trace: tuple[PlacementStep, ...] = attrs.field(default=(), repr=False)
    detail: str = ""

    def mean_delay(self, Q: np.ndarray) -> float:
        """Request-weighted mean of G over all users and files."""
        return float(np.sum(Q * self.delays) / Q.shape[0])


def file_order(popularity) -> np.ndarray:
    return np.argsort(-popularity.file_metrics(), kind="stable")


def _pick(objectives: np.ndarray, candidates: np.ndarray, ranks: np.ndarray) -> int:
    top = float(np.max(objectives))
    tied = [k for k in range(candidates.size)
            if math.isclose(float(objectives[k]), top, rel_tol=TIE_REL_TOL, abs_tol=TIE_ABS_TOL)]
    return int(max(tied, key=lambda k: (ranks[candidates[k]], -candidates[k])))


def place_all(context: DeliveryContext, channel_of, allow_d2d: bool = True) -> PlacementResult:
    inst = context.instance
    Q = context.Q
    residual = inst.capacities().copy()
    if not allow_d2d:
        residual[1 + inst.num_sbs:] = 0
    ranks = inst.kind_ranks()
    holders = np.full(context.num_files, NO_HOLDER, dtype=int)
    trace = []
    for f in file_order(context.popularity):
        candidates = np.flatnonzero(residual > 0)
        if candidates.size == 0:
            trace.append(PlacementStep(file=int(f), node=NO_HOLDER, objective=0.0))
            continue
        batch = np.tile(holders, (candidates.size, 1))
        batch[:, f] = candidates
        G = context.batch_delays(batch, channel_of, files=[f])[:, :, 0]
        objectives = (Q[None, :, f] * (G <= context.D_th)).sum(axis=1) / context.num_users
        k = _pick(objectives, candidates, ranks)
        fallback = objectives[k] == 0.0
        if fallback:
            # nothing helps this file; park it where the most room is left
            k = int(np.argmax(residual[candidates]))
        node = int(candidates[k])
        holders[f] = node
        residual[node] -= 1
        trace.append(PlacementStep(file=int(f), node=node, objective=float(objectives[k]), fallback=bool(fallback)))
        log.debug("file %d -> node %s (O_f=%.4g%s)", f, inst.node_id(node), objectives[k],
                  ", fallback" if fallback else "")
    return PlacementResult(holders=holders, trace=tuple(trace), num_nodes=inst.num_nodes)


def baseline_no_d2d(context: DeliveryContext, channel_of) -> PlacementResult:
    return place_all(context, channel_of, allow_d2d=False)


def evaluate_deliveries(context: DeliveryContext, assignment: Assignment) -> tuple[np.ndarray, float, np.ndarray]:
    """(X, SDR, G): x[u, f] = 1 exactly when G[u, f] <= D_th."""
    require_feasible(context.instance, assignment)
    G = context.delay_matrix(assignment)
    return context.deliveries(G), context.sdr(G), G


def _solve(method: str, context: DeliveryContext, cfg: dict, seed: int, allow_d2d: bool) -> Solution:
    inst = context.instance
    started = time.perf_counter()
    channels = allocate_from_config(inst, cfg, seed)
    channel_of = channels.argmax(axis=1)
    placement = place_all(context, channel_of, allow_d2d=allow_d2d)
    assignment = Assignment(caching=placement.caching, channels=channels)
    X, sdr, G = evaluate_deliveries(context, assignment)
    elapsed = time.perf_counter() - started
    placed = int(np.count_nonzero(placement.holders != NO_HOLDER))
    log.info("%s: SDR=%.4f, %d/%d files cached, %d fallback placements, %.2fs",
             method, sdr, placed, placement.holders.size, placement.fallbacks, elapsed)
    return Solution(method=method, assignment=assignment.with_delivery(X), sdr=sdr, delays=G,
                    runtime_s=elapsed, trace=placement.trace)


def heuristic_solution(context: DeliveryContext, cfg: dict, seed: int = 0) -> Solution:
    return _solve("heuristic", context, cfg, seed, allow_d2d=True)


def no_d2d_solution(context: DeliveryContext, cfg: dict, seed: int = 0) -> Solution:
    return _solve("no_d2d", context, cfg, seed, allow_d2d=False)
