#!/usr/bin/env python3
"""Average delivery-delay bound G[u, f] of a caching + channel assignment.

Three evaluations of the same quantity live here:
  * delivery_bound             term-by-term over the probability products
  * delivery_bound_linearized  over materialised product variables (the ILP's auxiliaries)
  * DeliveryContext            vectorised over many single-copy placements at once

The first two build the same list of non-zero terms and sum it with
math.fsum, so they agree exactly on every assignment with at most one copy
per file. On a shared channel the no-interferer event carries whatever
probability the singleton interferer events leave, clipped at 0.
The vectorised engine agrees with them to rounding.

Node indices follow topology ([MBS, SBS.., UE..]); u, v are user indices.
"""
import csv
import io
import logging
import math

import attrs
import numpy as np

from errors import ConfigError, InfeasibleError, SearchLimitError
from settings import ASSIGNMENT_SCHEMA, atomic_write_text, atomic_write_yaml, load_yaml, validate_document

log = logging.getLogger(__name__)

NO_HOLDER = -1
MAX_AUXILIARY_ENTRIES = 50_000_000


def _binary(name: str, value) -> np.ndarray:
    arr = np.array(value, dtype=np.int8, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if np.any((arr != 0) & (arr != 1)):
        raise ValueError(f"{name} must be binary")
    arr.setflags(write=False)
    return arr


@attrs.frozen(eq=False)
class Assignment:
    caching: np.ndarray = attrs.field(converter=lambda v: _binary("caching", v), repr=False)
    channels: np.ndarray = attrs.field(converter=lambda v: _binary("channels", v), repr=False)
    delivery: np.ndarray | None = attrs.field(default=None, repr=False,
                                              converter=lambda v: None if v is None else _binary("delivery", v))

    def __attrs_post_init__(self):
        if self.delivery is not None and self.delivery.shape != (self.num_users, self.num_files):
            raise ValueError(f"delivery shape {self.delivery.shape} does not match "
                             f"U={self.num_users}, F={self.num_files}")

    @property
    def num_nodes(self) -> int:
        return self.caching.shape[0]

    @property
    def num_files(self) -> int:
        return self.caching.shape[1]

    @property
    def num_users(self) -> int:
        return self.channels.shape[0]

    @property
    def num_channels(self) -> int:
        return self.channels.shape[1]

    @classmethod
    def from_vectors(cls, holders, channel_of, num_nodes: int, num_channels: int, delivery=None) -> "Assignment":
        holders = np.asarray(holders, dtype=int)
        channel_of = np.asarray(channel_of, dtype=int)
        caching = np.zeros((num_nodes, holders.size), dtype=np.int8)
        placed = holders != NO_HOLDER
        caching[holders[placed], np.flatnonzero(placed)] = 1
        channels = np.zeros((channel_of.size, num_channels), dtype=np.int8)
        channels[np.arange(channel_of.size), channel_of] = 1
        return cls(caching=caching, channels=channels, delivery=delivery)

    def with_delivery(self, delivery) -> "Assignment":
        return attrs.evolve(self, delivery=delivery)

    def holders(self) -> np.ndarray:
        """Caching node per file, NO_HOLDER when uncached; requires at most one copy per file."""
        copies = self.caching.sum(axis=0)
        if np.any(copies > 1):
            raise InfeasibleError(f"files {np.flatnonzero(copies > 1).tolist()} are cached more than once")
        out = np.full(self.num_files, NO_HOLDER, dtype=int)
        nodes, files = np.nonzero(self.caching)
        out[files] = nodes
        return out

    def channel_of(self) -> np.ndarray:
        per_user = self.channels.sum(axis=1)
        if np.any(per_user != 1):
            raise InfeasibleError(f"users {np.flatnonzero(per_user != 1).tolist()} do not hold exactly one channel")
        return self.channels.argmax(axis=1)

    def check_shape(self, instance) -> None:
        expected = (instance.num_nodes, instance.params.F)
        if self.caching.shape != expected:
            raise ValueError(f"caching matrix {self.caching.shape}, instance needs {expected}")
        expected = (instance.num_users, instance.params.W)
        if self.channels.shape != expected:
            raise ValueError(f"channel matrix {self.channels.shape}, instance needs {expected}")

    def to_dict(self) -> dict:
        doc = {"caching": self.caching.tolist(), "channels": self.channels.tolist()}
        if self.delivery is not None:
            doc["delivery"] = self.delivery.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Assignment":
        return cls(caching=doc["caching"], channels=doc["channels"], delivery=doc.get("delivery"))


@attrs.frozen
class Violation:
    constraint: str
    index: tuple
    slack: float

    def __str__(self) -> str:
        return f"{self.constraint}{list(self.index)} slack={self.slack:g}"


def structural_violations(instance, assignment: Assignment) -> list[Violation]:
    """Capacity, single-copy, one-channel-per-user and channel-reuse constraints."""
    assignment.check_shape(instance)
    out = []
    used = assignment.caching.sum(axis=1)
    for i, cap in enumerate(instance.capacities()):
        if used[i] > cap:
            out.append(Violation("capacity", (i,), float(cap - used[i])))
    for f, copies in enumerate(assignment.caching.sum(axis=0)):
        if copies > 1:
            out.append(Violation("single_copy", (f,), float(1 - copies)))
    for u, held in enumerate(assignment.channels.sum(axis=1)):
        if held != 1:
            out.append(Violation("one_channel", (u,), float(1 - held)))
    reuse = instance.reuse_limit
    for w, users in enumerate(assignment.channels.sum(axis=0)):
        if users > reuse:
            out.append(Violation("channel_reuse", (w,), float(reuse - users)))
    return out


def require_feasible(instance, assignment: Assignment) -> None:
    problems = structural_violations(instance, assignment)
    if problems:
        shown = ", ".join(str(p) for p in problems[:5])
        raise InfeasibleError(f"{len(problems)} constraint violations: {shown}")


# ---------- probabilities ----------

@attrs.frozen(eq=False)
class TransmitterBreakdown:
    p_none: int
    p_node: np.ndarray = attrs.field(repr=False)


@attrs.frozen(eq=False)
class InterfererBreakdown:
    # no singleton interferer: 1 on a channel of its own, else what the singleton events leave over
    p_none: float
    # an expected interferer count per node; sums above 1 are possible with several co-channel users
    p_node: np.ndarray = attrs.field(repr=False)


@attrs.frozen(eq=False)
class ProbabilityBreakdown:
    transmitter: TransmitterBreakdown
    # interferers[x] conditions on x transmitting (x = 0 also covers the backhaul branch)
    interferers: dict

    @property
    def p_no_transmitter(self) -> int:
        return self.transmitter.p_none

    @property
    def p_transmitter(self) -> np.ndarray:
        return self.transmitter.p_node


def _user_node(num_nodes: int, num_users: int, u: int) -> int:
    return num_nodes - num_users + u


def _transmitter_table(caching: np.ndarray, num_users: int) -> np.ndarray:
    """P[v, f, y]: y is the potential transmitter of file f to user v."""
    n, F = caching.shape
    free = 1 - caching.astype(np.int64)
    out = np.zeros((num_users, F, n), dtype=np.int64)
    for v in range(num_users):
        vn = _user_node(n, num_users, v)
        for y in range(n):
            if y == vn:
                continue
            others = np.ones(F, dtype=np.int64)
            for i in range(n):
                if i not in (vn, y):
                    others = others * free[i]
            out[v, :, y] = caching[y] * others
    return out


def transmitter_probs(assignment: Assignment, u: int, f: int) -> TransmitterBreakdown:
    c = assignment.caching.astype(np.int64)
    n = assignment.num_nodes
    un = _user_node(n, assignment.num_users, u)
    p_none = 1
    for x in range(n):
        if x != un:
            p_none *= 1 - int(c[x, f])
    p_node = np.zeros(n, dtype=np.int64)
    for x in range(n):
        if x == un or not c[x, f]:
            continue
        prod = 1
        for other in range(n):
            if other not in (un, x):
                prod *= 1 - int(c[other, f])
        p_node[x] = prod
    return TransmitterBreakdown(p_none=p_none, p_node=p_node)


def _no_interferer_by_channel(r: np.ndarray, u: int) -> np.ndarray:
    out = r[u].astype(np.int64).copy()
    for v in range(r.shape[0]):
        if v != u:
            out *= 1 - r[v].astype(np.int64)
    return out


def _empty_mass(mass) -> float:
    return max(0.0, 1.0 - math.fsum(mass))


def interferer_probs(assignment: Assignment, popularity, u: int, f: int, transmitter: int = 0) -> InterfererBreakdown:
    n, U = assignment.num_nodes, assignment.num_users
    r = assignment.channels
    Q = popularity.Q
    un = _user_node(n, U, u)
    ptx = _transmitter_table(assignment.caching, U)
    p_node = np.zeros(n)
    mass = []
    for y in range(n):
        if y in (un, transmitter):
            continue
        total = 0.0
        for w in range(assignment.num_channels):
            for v in range(U):
                vn = _user_node(n, U, v)
                if v == u or vn in (transmitter, y) or not (r[u, w] and r[v, w]):
                    continue
                for g in range(assignment.num_files):
                    if g != f and ptx[v, g, y]:
                        total += Q[v, g]
                        mass.append(float(Q[v, g]))
        p_node[y] = total
    if _no_interferer_by_channel(r, u).any():
        return InterfererBreakdown(p_none=1.0, p_node=p_node)
    return InterfererBreakdown(p_none=_empty_mass(mass), p_node=p_node)


def probability_breakdown(assignment: Assignment, popularity, u: int, f: int) -> ProbabilityBreakdown:
    tx = transmitter_probs(assignment, u, f)
    branches = {0: interferer_probs(assignment, popularity, u, f, 0)}
    for x in np.flatnonzero(tx.p_node):
        branches.setdefault(int(x), interferer_probs(assignment, popularity, u, f, int(x)))
    return ProbabilityBreakdown(transmitter=tx, interferers=branches)


# ---------- term-by-term bound ----------

def delivery_bound(assignment: Assignment, popularity, bounds, u: int, f: int) -> float:
    g_free, g_int = bounds.arrays()
    T0 = bounds.instance.params.T0
    c = assignment.caching.astype(np.int64)
    r = assignment.channels.astype(np.int64)
    Q = popularity.Q
    n, U, W, F = assignment.num_nodes, assignment.num_users, assignment.num_channels, assignment.num_files
    un = _user_node(n, U, u)
    lead = 1 - int(c[un, f])
    tx = transmitter_probs(assignment, u, f)
    ptx = _transmitter_table(assignment.caching, U)
    clear = _no_interferer_by_channel(assignment.channels, u)

    terms = []

    def branch(weight: int, x: int, backhaul: bool):
        if backhaul:
            terms.append(T0 * weight)
        for w in range(W):
            if weight * clear[w]:
                terms.append(float(g_free[x, u]) * int(weight * clear[w]))
        mass = []
        for w in range(W):
            for v in range(U):
                vn = _user_node(n, U, v)
                if v == u or vn == x:
                    continue
                pair = weight * r[u, w] * r[v, w]
                if not pair:
                    continue
                for g in range(F):
                    if g == f:
                        continue
                    for y in range(n):
                        if y in (un, vn, x) or not ptx[v, g, y]:
                            continue
                        terms.append(float(Q[v, g] * g_int[x, u, y]) * int(pair * ptx[v, g, y]))
                        mass.append(float(Q[v, g]))
        if weight and not clear.any():
            empty = _empty_mass(mass)
            if empty:
                terms.append(float(g_free[x, u]) * empty)

    if lead * tx.p_none:
        branch(lead * tx.p_none, 0, backhaul=True)
    for x in range(n):
        if x != un and lead * tx.p_node[x]:
            branch(int(lead * tx.p_node[x]), x, backhaul=False)
    return math.fsum(terms)


# ---------- linearised form ----------

@attrs.frozen(eq=False)
class Auxiliaries:
    """Product variables of the linearised model, as dense 0/1 arrays.

    rho[u, j, w]      running product over users 0..j of r[u, w] (j == u) or 1 - r[j, w]
    phi[i, f]         running product over nodes 0..i of 1 - c[i, f]
    phix[x, i, f]     running product over nodes 0..i of c[x, f] (i == x) or 1 - c[i, f]
    rr[u, v, w]       r[u, w] r[v, w], v != u
    gamma[u, v, w, f] rr[u, v, w] phi[-1, f]
    gammax[u, v, x, w, f]   rr[u, v, w] phix[x, -1, f],  x not u or v
    omega[u, w, f]    rho[u, -1, w] phi[-1, f]
    omegax[u, x, w, f]      rho[u, -1, w] phix[x, -1, f], x not u
    lam[u, v, w, f, g, y]   gamma[u, v, w, f] phix[y, -1, g],  g != f, y not u, v or the MBS
    lamxy[u, v, w, f, g, x, y]  gammax[u, v, x, w, f] phix[y, -1, g],  g != f, y not u, v or x
    Entries outside those index sets are 0.
    """
    rho: np.ndarray
    phi: np.ndarray
    phix: np.ndarray
    rr: np.ndarray
    gamma: np.ndarray
    gammax: np.ndarray
    omega: np.ndarray
    omegax: np.ndarray
    lam: np.ndarray
    lamxy: np.ndarray


def auxiliary_size(num_nodes: int, num_users: int, num_channels: int, num_files: int) -> int:
    n, U, W, F = num_nodes, num_users, num_channels, num_files
    return U * U * W * F * F * n * (n + 1)


def _valid_node_masks(n: int, U: int):
    nodes = np.arange(n)
    user_nodes = n - U + np.arange(U)
    not_u = nodes[None, :] != user_nodes[:, None]                      # [u, x]
    pair = (user_nodes[:, None] != user_nodes[None, :])                 # [u, v]
    not_uv = not_u[:, None, :] & not_u[None, :, :] & pair[:, :, None]  # [u, v, x]
    return user_nodes, not_u, pair, not_uv


def materialize_auxiliaries(assignment: Assignment, limit: int = MAX_AUXILIARY_ENTRIES) -> Auxiliaries:
    n, U, W, F = assignment.num_nodes, assignment.num_users, assignment.num_channels, assignment.num_files
    size = auxiliary_size(n, U, W, F)
    if size > limit:
        raise SearchLimitError("auxiliary entries", size, limit)
    c = assignment.caching.astype(np.int64)
    r = assignment.channels.astype(np.int64)
    user_nodes, not_u, pair, not_uv = _valid_node_masks(n, U)

    delta = np.where(np.eye(U, dtype=bool)[:, :, None], r[None, :, :], 1 - r[None, :, :])   # [u, j, w]
    rho = np.cumprod(delta, axis=1)
    phi = np.cumprod(1 - c, axis=0)
    cbar = np.where(np.eye(n, dtype=bool)[:, :, None], c[None, :, :], 1 - c[None, :, :])     # [x, i, f]
    phix = np.cumprod(cbar, axis=1)

    rr = r[:, None, :] * r[None, :, :] * pair[:, :, None]
    phi_last = phi[-1]
    phix_last = phix[:, -1, :]                                                               # [x, f]
    gamma = rr[:, :, :, None] * phi_last[None, None, None, :]
    gammax = (rr[:, :, None, :, None] * phix_last[None, None, :, None, :]
              * not_uv[:, :, :, None, None])
    omega = rho[:, -1, :, None] * phi_last[None, None, :]
    omegax = rho[:, -1, None, :, None] * phix_last[None, :, None, :] * not_u[:, :, None, None]

    other_file = ~np.eye(F, dtype=bool)                                                      # [f, g]
    y_ok = not_uv.copy()
    y_ok[:, :, 0] = False                                                                    # [u, v, y]
    lam = (gamma[:, :, :, :, None, None] * phix_last.T[None, None, None, None, :, :]
           * other_file[None, None, None, :, :, None] * y_ok[:, :, None, None, None, :])
    xy_ok = not_uv[:, :, :, None] & not_uv[:, :, None, :] & ~np.eye(n, dtype=bool)[None, None]   # [u, v, x, y]
    lamxy = (gammax.transpose(0, 1, 3, 4, 2)[:, :, :, :, None, :, None]
             * phix_last.T[None, None, None, None, :, None, :]
             * other_file[None, None, None, :, :, None, None]
             * xy_ok[:, :, None, None, None, :, :])
    return Auxiliaries(rho=rho, phi=phi, phix=phix, rr=rr, gamma=gamma, gammax=gammax,
                       omega=omega, omegax=omegax, lam=lam, lamxy=lamxy)


def empty_interferer_mass(aux: Auxiliaries, Q: np.ndarray, u: int, f: int) -> dict:
    """No-interferer probability of every active branch of (u, f) whose channel is shared.

    Keyed by None for the backhaul branch and by the transmitting node otherwise;
    these are also the values of the model's continuous free_* variables.
    """
    n, U = aux.phi.shape[0], aux.rho.shape[0]
    un = _user_node(n, U, u)
    out = {}
    if aux.phi[-1, f] and not aux.omega[u, :, f].any():
        out[None] = _empty_mass(float(Q[v, g]) for v, _w, g, _y in zip(*np.nonzero(aux.lam[u, :, :, f])))
    for x in np.flatnonzero(aux.phix[:, -1, f]):
        if x == un or aux.omegax[u, x, :, f].any():
            continue
        out[int(x)] = _empty_mass(float(Q[v, g])
                                  for v, _w, g, _y in zip(*np.nonzero(aux.lamxy[u, :, :, f, :, x, :])))
    return out


def delivery_bound_linearized(assignment: Assignment, popularity, bounds, u: int, f: int,
                              aux: Auxiliaries | None = None) -> float:
    if aux is None:
        aux = materialize_auxiliaries(assignment)
    g_free, g_int = bounds.arrays()
    T0 = bounds.instance.params.T0
    Q = popularity.Q

    terms = []
    if aux.phi[-1, f]:
        terms.append(T0 * int(aux.phi[-1, f]))
    for w in np.flatnonzero(aux.omega[u, :, f]):
        terms.append(float(g_free[0, u]) * int(aux.omega[u, w, f]))
    for x, w in zip(*np.nonzero(aux.omegax[u, :, :, f])):
        terms.append(float(g_free[x, u]) * int(aux.omegax[u, x, w, f]))
    for v, w, g, y in zip(*np.nonzero(aux.lam[u, :, :, f])):
        terms.append(float(Q[v, g] * g_int[0, u, y]) * int(aux.lam[u, v, w, f, g, y]))
    for v, w, g, x, y in zip(*np.nonzero(aux.lamxy[u, :, :, f])):
        terms.append(float(Q[v, g] * g_int[x, u, y]) * int(aux.lamxy[u, v, w, f, g, x, y]))
    for x, empty in empty_interferer_mass(aux, Q, u, f).items():
        if empty:
            terms.append(float(g_free[0 if x is None else x, u]) * empty)
    return math.fsum(terms)


# ---------- vectorised engine ----------

class DeliveryContext:
    """G[u, f] for batches of single-copy placements under one channel allocation."""

    def __init__(self, instance, popularity, bounds):
        if popularity.num_users != instance.num_users or popularity.num_files != instance.params.F:
            raise ValueError("popularity model does not match the instance dimensions")
        self.instance = instance
        self.popularity = popularity
        self.bounds = bounds
        self.g_free, self.g_int = bounds.arrays()
        self.Q = popularity.Q
        self.T0 = instance.params.T0
        self.D_th = instance.params.D_th
        self.num_nodes = instance.num_nodes
        self.num_users = instance.num_users
        self.num_files = instance.params.F
        self.user_nodes = instance.user_nodes()
        local = np.ones((self.num_users, self.num_nodes))
        local[np.arange(self.num_users), self.user_nodes] = 0.0
        self._remote = local

    def co_channel(self, channel_of) -> tuple[np.ndarray, np.ndarray]:
        """(co[u, v] for distinct co-channel users, 1 where u has its channel to itself)."""
        ch = np.asarray(channel_of, dtype=int)
        co = (ch[:, None] == ch[None, :]) & ~np.eye(self.num_users, dtype=bool)
        return co.astype(float), (~co.any(axis=1)).astype(float)

    def batch_delays(self, holders, channel_of, files=None) -> np.ndarray:
        """G[m, u, k] for placements holders[m] (caching node per file or NO_HOLDER) and files[k]."""
        H = np.atleast_2d(np.asarray(holders, dtype=int))
        files = np.arange(self.num_files) if files is None else np.atleast_1d(np.asarray(files, dtype=int))
        n, U = self.num_nodes, self.num_users
        co, _alone = self.co_channel(channel_of)

        onehot = (H[:, :, None] == np.arange(n)).astype(float)                    # [m, g, y]
        other_file = (np.arange(self.num_files)[:, None] != files[None, :]).astype(float)
        # Q-weighted chance that user v's request is served by y, excluding the file under evaluation
        A = np.einsum("vg,mgy,gk,vy->mvyk", self.Q, onehot, other_file, self._remote, optimize=True)

        Hk = H[:, files]                                                             # [m, k]
        sender = np.where(Hk == NO_HOLDER, 0, Hk)
        keep = (self.user_nodes[None, :, None] != sender[:, None, :]).astype(float)  # [m, v, k]
        I = np.einsum("uv,mvk,mvyk->muyk", co, keep, A, optimize=True)

        ys = np.arange(n)
        y_ok = ((ys[None, :] != self.user_nodes[:, None])[None, :, :, None]
                & (ys[None, None, None, :] != sender[:, None, :, None]).transpose(0, 1, 3, 2))
        g_int = self.g_int[sender].transpose(0, 2, 3, 1)                            # [m, u, y, k]
        I = I * y_ok
        interference = np.einsum("muyk,muyk->muk", I, g_int)
        # a user alone on its channel has no singleton mass, so this is 1 there
        empty = np.clip(1.0 - I.sum(axis=2), 0.0, None)
        g_free = self.g_free[sender].transpose(0, 2, 1)                             # [m, u, k]

        none = (Hk == NO_HOLDER).astype(float)[:, None, :]
        lead = (Hk[:, None, :] != self.user_nodes[None, :, None]).astype(float)
        return lead * (none * self.T0 + empty * g_free + interference)

    def delay_matrix(self, assignment: Assignment) -> np.ndarray:
        return self.batch_delays(assignment.holders()[None, :], assignment.channel_of())[0]

    def deliveries(self, G: np.ndarray) -> np.ndarray:
        return (G <= self.D_th).astype(np.int8)

    def sdr(self, G: np.ndarray) -> float:
        """Share of requests delivered within the delay threshold."""
        return float(np.sum(self.Q * (G <= self.D_th)) / self.num_users)

    def batch_sdr(self, holders, channel_of) -> np.ndarray:
        G = self.batch_delays(holders, channel_of)
        return np.einsum("uf,muf->m", self.Q, (G <= self.D_th).astype(float)) / self.num_users


def dump_delay_csv(path: str, G: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["u", "f", "G"])
    for u in range(G.shape[0]):
        for f in range(G.shape[1]):
            writer.writerow([u, f, repr(float(G[u, f]))])
    atomic_write_text(path, buf.getvalue())
    log.info("wrote %d delay bounds to %s", G.size, path)


# ---------- assignment files ----------

def save_assignment(path: str, assignment: Assignment, meta: dict | None = None) -> None:
    doc = assignment.to_dict()
    if meta:
        doc = {"meta": dict(meta), **doc}
    atomic_write_yaml(path, doc)


def load_assignment(path: str) -> Assignment:
    doc = load_yaml(path)
    validate_document(doc, ASSIGNMENT_SCHEMA, f"assignment file {path}")
    try:
        return Assignment.from_dict(doc)
    except ValueError as exc:
        raise ConfigError(f"invalid assignment file {path}: {exc}") from None
