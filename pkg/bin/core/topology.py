#!/usr/bin/env python3
"""Macro-cell geometry: one MBS at the origin, SBSs and UEs placed at random.

Node order everywhere is [MBS, SBS 1..S, UE 1..U]; integer node indices refer
to that order, user indices u = 0..U-1 map to node S + 1 + u.
"""
import enum
import logging
import math

import attrs
import numpy as np

from errors import ConfigError
from popularity import PopularityModel
from settings import INSTANCE_SCHEMA, atomic_write_yaml, load_yaml, validate_document

log = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 10_000


class NodeKind(enum.Enum):
    MBS = "MBS"
    SBS = "SBS"
    UE = "UE"


@attrs.frozen(order=True)
class NodeId:
    kind: NodeKind = attrs.field(order=lambda k: ("MBS", "SBS", "UE").index(k.value))
    index: int = 1

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"


MBS = NodeId(NodeKind.MBS, 1)


def _positive(_inst, attribute, value):
    if not value > 0:
        raise ConfigError(f"{attribute.name} must be > 0, got {value}")


def _non_negative(_inst, attribute, value):
    if value < 0:
        raise ConfigError(f"{attribute.name} must be >= 0, got {value}")


def _alpha(_inst, _attribute, value):
    if value < 2:
        raise ConfigError(f"path-loss exponent alpha must be >= 2, got {value}")


@attrs.frozen
class RadioParams:
    cell_radius: float = attrs.field(converter=float, validator=_positive)
    sbs_radius: float = attrs.field(converter=float, validator=_non_negative)
    P_m: float = attrs.field(converter=float, validator=_positive)
    P_S: float = attrs.field(converter=float, validator=_positive)
    P_U: float = attrs.field(converter=float, validator=_positive)
    noise_power: float = attrs.field(converter=float, validator=_positive)
    alpha: float = attrs.field(converter=float, validator=_alpha)
    d0: float = attrs.field(converter=float, validator=_positive)
    W: int = attrs.field(converter=int, validator=_positive)
    B: float = attrs.field(converter=float, validator=_positive)
    tau: float = attrs.field(converter=float, validator=_positive)
    T0: float = attrs.field(converter=float, validator=_non_negative)
    D_th: float = attrs.field(converter=float, validator=_non_negative)
    C_m: float = attrs.field(converter=float, validator=_non_negative)
    C_S: float = attrs.field(converter=float, validator=_non_negative)
    C_U: float = attrs.field(converter=float, validator=_non_negative)
    F: int = attrs.field(converter=int, validator=_positive)
    L: float = attrs.field(converter=float, validator=_positive)
    R: int | None = None
    min_separation: float = attrs.field(default=1.0, converter=float, validator=_non_negative)

    @property
    def load(self) -> float:
        """L / (tau B): bits per slot per Hz a file needs."""
        return self.L / (self.tau * self.B)

    @classmethod
    def from_config(cls, cfg: dict) -> "RadioParams":
        names = [a.name for a in attrs.fields(cls)]
        return cls(**{n: cfg[n] for n in names if n in cfg})

    def to_dict(self) -> dict:
        return attrs.asdict(self)


@attrs.frozen(eq=False)
class NetworkInstance:
    params: RadioParams
    positions: np.ndarray = attrs.field(repr=False)
    num_sbs: int
    num_users: int

    def __attrs_post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.shape != (1 + self.num_sbs + self.num_users, 2):
            raise ConfigError(f"positions shape {pos.shape} does not match S={self.num_sbs}, U={self.num_users}")
        if np.any(np.hypot(pos[:, 0], pos[:, 1]) > self.params.cell_radius * (1 + 1e-12)):
            raise ConfigError("node outside the cell radius")
        if self.params.R is not None and self.params.R * self.params.W < self.num_users:
            raise ConfigError(f"R={self.params.R} below ceil(U/W)")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    # ---------- node bookkeeping ----------

    @property
    def num_nodes(self) -> int:
        return 1 + self.num_sbs + self.num_users

    @property
    def reuse_limit(self) -> int:
        if self.params.R is not None:
            return self.params.R
        return math.ceil(self.num_users / self.params.W)

    def nodes(self) -> tuple[NodeId, ...]:
        return tuple(self.node_id(i) for i in range(self.num_nodes))

    def node_id(self, i: int) -> NodeId:
        if not 0 <= i < self.num_nodes:
            raise KeyError(f"unknown node index {i}")
        if i == 0:
            return MBS
        if i <= self.num_sbs:
            return NodeId(NodeKind.SBS, i)
        return NodeId(NodeKind.UE, i - self.num_sbs)

    def node_index(self, node: NodeId | int) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < self.num_nodes:
                raise KeyError(f"unknown node index {node}")
            return int(node)
        if node.kind is NodeKind.MBS and node.index == 1:
            return 0
        if node.kind is NodeKind.SBS and 1 <= node.index <= self.num_sbs:
            return node.index
        if node.kind is NodeKind.UE and 1 <= node.index <= self.num_users:
            return self.num_sbs + node.index
        raise KeyError(f"unknown node {node}")

    def user_node(self, u: int) -> int:
        if not 0 <= u < self.num_users:
            raise KeyError(f"unknown user index {u}")
        return 1 + self.num_sbs + u

    def user_nodes(self) -> np.ndarray:
        return np.arange(1 + self.num_sbs, self.num_nodes)

    def kind_of(self, i: int) -> NodeKind:
        return self.node_id(i).kind

    def kind_ranks(self) -> np.ndarray:
        """0 for the MBS, 1 for SBSs, 2 for UEs; larger means closer to the edge."""
        ranks = np.full(self.num_nodes, 2, dtype=int)
        ranks[0] = 0
        ranks[1:1 + self.num_sbs] = 1
        return ranks

    # ---------- radio ----------

    def power(self, node: NodeId | int) -> float:
        kind = self.kind_of(self.node_index(node))
        p = self.params
        return {NodeKind.MBS: p.P_m, NodeKind.SBS: p.P_S, NodeKind.UE: p.P_U}[kind]

    def capacity_bits(self, node: NodeId | int) -> float:
        kind = self.kind_of(self.node_index(node))
        p = self.params
        return {NodeKind.MBS: p.C_m, NodeKind.SBS: p.C_S, NodeKind.UE: p.C_U}[kind]

    def capacity_slots(self, node: NodeId | int) -> int:
        return int(math.floor(self.capacity_bits(node) / self.params.L + 1e-12))

    def capacities(self) -> np.ndarray:
        return np.array([self.capacity_slots(i) for i in range(self.num_nodes)], dtype=int)

    def distance(self, i: NodeId | int, j: NodeId | int) -> float:
        a = self.positions[self.node_index(i)]
        b = self.positions[self.node_index(j)]
        return float(math.hypot(a[0] - b[0], a[1] - b[1]))

    def theta(self, i: NodeId | int, j: NodeId | int) -> float:
        """Mean received SNR of a transmission from i at j."""
        ii, jj = self.node_index(i), self.node_index(j)
        if ii == jj:
            raise ValueError(f"theta needs two distinct nodes, got {self.node_id(ii)} twice")
        d = self.distance(ii, jj)
        if d <= 0.0:
            raise ValueError(f"zero distance between {self.node_id(ii)} and {self.node_id(jj)}")
        p = self.params
        return self.power(ii) / p.noise_power * (d / p.d0) ** (-p.alpha)

    # ---------- serialisation ----------

    def to_dict(self) -> dict:
        return {
            "num_sbs": self.num_sbs,
            "num_users": self.num_users,
            "params": self.params.to_dict(),
            "positions": [[float(x), float(y)] for x, y in self.positions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkInstance":
        return cls(params=RadioParams(**doc["params"]), positions=np.array(doc["positions"], dtype=float),
                   num_sbs=int(doc["num_sbs"]), num_users=int(doc["num_users"]))

    def same_as(self, other: "NetworkInstance") -> bool:
        return (self.params == other.params and self.num_sbs == other.num_sbs
                and self.num_users == other.num_users
                and self.positions.tobytes() == other.positions.tobytes())


# ---------- generation ----------

def _uniform_in_disc(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.random())
    phi = 2.0 * math.pi * rng.random()
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def generate(seed: int, U: int, S: int, params: RadioParams) -> NetworkInstance:
    if U < 1:
        raise ConfigError(f"need at least one user, got U={U}")
    if S < 0:
        raise ConfigError(f"SBS count must be >= 0, got S={S}")
    if params.sbs_radius > params.cell_radius:
        raise ConfigError("sbs_radius exceeds cell_radius")

    rng = np.random.default_rng(seed)
    placed = [np.zeros(2)]
    for _ in range(S):
        placed.append(_uniform_in_disc(rng, params.sbs_radius))
    for u in range(U):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            cand = _uniform_in_disc(rng, params.cell_radius)
            gaps = np.hypot(*(np.array(placed) - cand).T)
            if gaps.min() >= params.min_separation:
                placed.append(cand)
                break
        else:
            raise ConfigError(f"could not place UE {u + 1} at >= {params.min_separation} m from other nodes")
    instance = NetworkInstance(params=params, positions=np.array(placed), num_sbs=S, num_users=U)
    log.debug("generated instance seed=%s U=%s S=%s", seed, U, S)
    return instance


# ---------- instance files ----------

def save_instance(path: str, instance: NetworkInstance, popularity=None, meta: dict | None = None) -> None:
    doc = {"network": instance.to_dict()}
    if popularity is not None:
        doc["popularity"] = popularity.to_dict()
    if meta:
        doc["meta"] = dict(meta)
    atomic_write_yaml(path, doc)


def load_instance(path: str):
    """Returns (instance, popularity or None)."""
    doc = load_yaml(path)
    validate_document(doc, INSTANCE_SCHEMA, f"instance file {path}")
    instance = NetworkInstance.from_dict(doc["network"])
    popularity = PopularityModel.from_dict(doc["popularity"]) if "popularity" in doc else None
    if popularity is not None and popularity.num_users != instance.num_users:
        raise ConfigError(f"popularity has {popularity.num_users} users, network has {instance.num_users}")
    if popularity is not None and popularity.num_files != instance.params.F:
        raise ConfigError(f"popularity has {popularity.num_files} files, network expects F={instance.params.F}")
    return instance, popularity
