#!/usr/bin/env python3
"""Exact optimum on small instances, and the linearised integer program.

solve_exhaustive walks every single-copy placement (each file at one node or
nowhere) for every channel partition; deliveries are implied by the delay
bound, so they are never enumerated. build_ilp writes the same problem as a mixed
binary program whose product terms are replaced by auxiliary variables, each
pinned by the usual three inequalities (y <= a, y <= b, y >= a + b - 1).

Variable names:
  c_i_f, r_u_w, x_u_f                 placement, channel, delivery
  aux_rho_u_j_w                        running no-co-user product over users 0..j
  aux_phi_i_f, aux_phix_x_i_f          running cache products over nodes 0..i
  aux_rr_u_v_w                         r_u_w * r_v_w
  aux_gamma_u_v_w_f, aux_gammax_u_v_x_w_f
  aux_omega_u_w_f, aux_omegax_u_x_w_f
  aux_lam_u_v_w_f_g_y, aux_lamxy_u_v_w_f_g_x_y
  free_u_f, freex_u_x_f                continuous no-interferer mass of the backhaul / transmitter-x branch
i, j, x, y are node indices ([MBS, SBS.., UE..]), u, v user indices, f, g files.
"""
import logging
import os
import time

import attrs
import numpy as np
import pulp

from delivery_delay import (Assignment, DeliveryContext, Violation, empty_interferer_mass, materialize_auxiliaries,
                            structural_violations)
from errors import SearchLimitError

log = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 100_000_000
DEFAULT_MAX_ILP_VARIABLES = 500_000
DEFAULT_CHUNK = 4096


# ---------- exhaustive search ----------

def channel_partitions(U: int, W: int, R: int):
    """Channel-of vectors for every partition of users into <= W groups of <= R users.

    Channel labels are interchangeable, so each partition appears once, in
    restricted-growth order (user 0 on channel 0, a new group takes the next label).
    """
    labels = [0] * U
    counts = [0] * W

    def grow(k: int, used: int):
        if k == U:
            yield np.array(labels, dtype=int)
            return
        for w in range(min(used + 1, W)):
            if counts[w] >= R:
                continue
            labels[k] = w
            counts[w] += 1
            yield from grow(k + 1, max(used, w + 1))
            counts[w] -= 1

    yield from grow(0, 0)


def search_space(instance) -> tuple[int, int]:
    """((N + 1)^F placements, number of channel partitions)."""
    partitions = sum(1 for _ in channel_partitions(instance.num_users, instance.params.W, instance.reuse_limit))
    return (instance.num_nodes + 1) ** instance.params.F, partitions


@attrs.frozen(eq=False)
class SolveResult:
    assignment: Assignment
    sdr: float
    delays: np.ndarray = attrs.field(repr=False)
    explored: int
    elapsed_s: float
    estimate: int


def _decode(codes: np.ndarray, base: int, num_files: int) -> np.ndarray:
    """Holder matrix for placement codes; file 0 is the most significant digit, digit 0 means uncached."""
    digits = np.empty((codes.size, num_files), dtype=np.int64)
    rest = codes.copy()
    for f in range(num_files - 1, -1, -1):
        digits[:, f] = rest % base
        rest //= base
    return digits - 1


def solve_exhaustive(context: DeliveryContext, max_states: int = DEFAULT_MAX_STATES,
                     chunk: int = DEFAULT_CHUNK) -> SolveResult:
    """Global SDR maximum; ties keep the first channel partition, then the smallest placement code."""
    inst = context.instance
    placements, partitions = search_space(inst)
    estimate = placements * partitions
    if estimate > max_states:
        raise SearchLimitError("exhaustive search", estimate, max_states)

    started = time.perf_counter()
    n, F = inst.num_nodes, context.num_files
    caps = inst.capacities()
    best_value, best_holders, best_channels = -1.0, None, None
    explored = 0
    for channel_of in channel_partitions(inst.num_users, inst.params.W, inst.reuse_limit):
        for lo in range(0, placements, chunk):
            H = _decode(np.arange(lo, min(lo + chunk, placements), dtype=np.int64), n + 1, F)
            load = (H[:, :, None] == np.arange(n)).sum(axis=1)
            H = H[np.all(load <= caps, axis=1)]
            if H.size == 0:
                continue
            explored += H.shape[0]
            values = context.batch_sdr(H, channel_of)
            k = int(np.argmax(values))
            if values[k] > best_value:
                best_value, best_holders, best_channels = float(values[k]), H[k].copy(), channel_of.copy()

    assignment = Assignment.from_vectors(best_holders, best_channels, n, inst.params.W)
    G = context.delay_matrix(assignment)
    assignment = assignment.with_delivery(context.deliveries(G))
    elapsed = time.perf_counter() - started
    log.info("exhaustive optimum SDR=%.4f after %d feasible states (estimate %d) in %.2fs",
             best_value, explored, estimate, elapsed)
    return SolveResult(assignment=assignment, sdr=best_value, delays=G, explored=explored,
                       elapsed_s=elapsed, estimate=estimate)


# ---------- linearised program ----------

def ilp_variable_count(num_nodes: int, num_users: int, num_channels: int, num_files: int) -> int:
    n, U, W, F = num_nodes, num_users, num_channels, num_files
    pairs = U * (U - 1)
    base = n * F + U * W + U * F
    chains = U * U * W + n * F + n * n * F
    products = (pairs * W + pairs * W * F + pairs * max(n - 2, 0) * W * F
                + U * W * F + U * (n - 1) * W * F)
    lams = pairs * W * F * (F - 1) * (max(n - 3, 0) + max(n - 2, 0) * max(n - 3, 0))
    empties = U * F * n
    return base + chains + products + lams + empties


@attrs.frozen(eq=False)
class IlpModel:
    problem: pulp.LpProblem
    variables: dict = attrs.field(repr=False)
    big_g: float
    # request probabilities, needed to value the continuous free_* variables
    weights: np.ndarray = attrs.field(repr=False)


def linearize(prob: pulp.LpProblem, a, b, y: pulp.LpVariable) -> None:
    """Adds the three constraints that force binary y = a * b."""
    prob += (y - a <= 0, f"{y.name}_le_a")
    prob += (y - b <= 0, f"{y.name}_le_b")
    prob += (y - a - b >= -1, f"{y.name}_ge")


def build_ilp(context: DeliveryContext, max_variables: int = DEFAULT_MAX_ILP_VARIABLES) -> IlpModel:
    inst = context.instance
    n, U, W, F = inst.num_nodes, inst.num_users, inst.params.W, context.num_files
    count = ilp_variable_count(n, U, W, F)
    if count > max_variables:
        raise SearchLimitError("ILP variable", count, max_variables)

    Q, g_free, g_int = context.Q, context.g_free, context.g_int
    T0, D_th = context.T0, context.D_th
    un = [int(v) for v in inst.user_nodes()]
    big_g = float(T0 + g_free.max(initial=0.0) + max(U - 1, 0) * g_int.max(initial=0.0))

    prob = pulp.LpProblem("joint_caching_channel", pulp.LpMaximize)
    var = {}

    def binary(name: str) -> pulp.LpVariable:
        v = pulp.LpVariable(name, cat=pulp.LpBinary)
        var[name] = v
        return v

    c = {(i, f): binary(f"c_{i}_{f}") for i in range(n) for f in range(F)}
    r = {(u, w): binary(f"r_{u}_{w}") for u in range(U) for w in range(W)}
    x = {(u, f): binary(f"x_{u}_{f}") for u in range(U) for f in range(F)}

    prob += pulp.lpSum(float(Q[u, f]) / U * x[u, f] for u in range(U) for f in range(F)), "sdr"

    for i in range(n):
        prob += (pulp.lpSum(c[i, f] for f in range(F)) <= int(inst.capacity_slots(i)), f"capacity_{i}")
    for f in range(F):
        prob += (pulp.lpSum(c[i, f] for i in range(n)) <= 1, f"single_copy_{f}")
    for u in range(U):
        prob += (pulp.lpSum(r[u, w] for w in range(W)) == 1, f"one_channel_{u}")
    for w in range(W):
        prob += (pulp.lpSum(r[u, w] for u in range(U)) <= inst.reuse_limit, f"channel_reuse_{w}")

    # running products
    rho = {}
    for u in range(U):
        for w in range(W):
            for j in range(U):
                delta = r[j, w] if j == u else 1 - r[j, w]
                rho[u, j, w] = binary(f"aux_rho_{u}_{j}_{w}")
                if j == 0:
                    prob += (rho[u, j, w] == delta, f"aux_rho_{u}_{j}_{w}_eq")
                else:
                    linearize(prob, rho[u, j - 1, w], delta, rho[u, j, w])
    phi = {}
    for f in range(F):
        for i in range(n):
            phi[i, f] = binary(f"aux_phi_{i}_{f}")
            if i == 0:
                prob += (phi[i, f] == 1 - c[i, f], f"aux_phi_{i}_{f}_eq")
            else:
                linearize(prob, phi[i - 1, f], 1 - c[i, f], phi[i, f])
    phix = {}
    for xn in range(n):
        for f in range(F):
            for i in range(n):
                cbar = c[i, f] if i == xn else 1 - c[i, f]
                phix[xn, i, f] = binary(f"aux_phix_{xn}_{i}_{f}")
                if i == 0:
                    prob += (phix[xn, i, f] == cbar, f"aux_phix_{xn}_{i}_{f}_eq")
                else:
                    linearize(prob, phix[xn, i - 1, f], cbar, phix[xn, i, f])
    last = n - 1

    rr = {}
    for u in range(U):
        for v in range(U):
            if u != v:
                for w in range(W):
                    rr[u, v, w] = binary(f"aux_rr_{u}_{v}_{w}")
                    linearize(prob, r[u, w], r[v, w], rr[u, v, w])

    def senders(u: int, v: int | None = None):
        return [xn for xn in range(n) if xn != un[u] and (v is None or xn != un[v])]

    omega, omegax, gamma, gammax = {}, {}, {}, {}
    for u in range(U):
        for w in range(W):
            for f in range(F):
                omega[u, w, f] = binary(f"aux_omega_{u}_{w}_{f}")
                linearize(prob, rho[u, U - 1, w], phi[last, f], omega[u, w, f])
                for xn in senders(u):
                    omegax[u, xn, w, f] = binary(f"aux_omegax_{u}_{xn}_{w}_{f}")
                    linearize(prob, rho[u, U - 1, w], phix[xn, last, f], omegax[u, xn, w, f])
    for (u, v, w) in rr:
        for f in range(F):
            gamma[u, v, w, f] = binary(f"aux_gamma_{u}_{v}_{w}_{f}")
            linearize(prob, rr[u, v, w], phi[last, f], gamma[u, v, w, f])
            for xn in senders(u, v):
                gammax[u, v, xn, w, f] = binary(f"aux_gammax_{u}_{v}_{xn}_{w}_{f}")
                linearize(prob, rr[u, v, w], phix[xn, last, f], gammax[u, v, xn, w, f])

    # delay bound per (u, f), with the product variables standing in for the probabilities
    delay = {(u, f): [(phi[last, f], float(T0))] for u in range(U) for f in range(F)}
    # empty[u, f, branch]: (branch indicator, alone-on-channel terms, singleton interferer terms);
    # branch None is the backhaul, otherwise the transmitting node
    empty = {}
    for u in range(U):
        for f in range(F):
            empty[u, f, None] = (phi[last, f], [], [])
            for xn in senders(u):
                empty[u, f, xn] = (phix[xn, last, f], [], [])
    for (u, w, f), v_ in omega.items():
        delay[u, f].append((v_, float(g_free[0, u])))
        empty[u, f, None][1].append((v_, 1))
    for (u, xn, w, f), v_ in omegax.items():
        delay[u, f].append((v_, float(g_free[xn, u])))
        empty[u, f, xn][1].append((v_, 1))
    for (u, v, w, f), gam in gamma.items():
        for g in range(F):
            if g == f:
                continue
            for y in senders(u, v):
                if y == 0:
                    continue
                lam = binary(f"aux_lam_{u}_{v}_{w}_{f}_{g}_{y}")
                linearize(prob, gam, phix[y, last, g], lam)
                delay[u, f].append((lam, float(Q[v, g] * g_int[0, u, y])))
                empty[u, f, None][2].append((lam, float(Q[v, g])))
    for (u, v, xn, w, f), gam in gammax.items():
        for g in range(F):
            if g == f:
                continue
            for y in senders(u, v):
                if y == xn:
                    continue
                lam = binary(f"aux_lamxy_{u}_{v}_{w}_{f}_{g}_{xn}_{y}")
                linearize(prob, gam, phix[y, last, g], lam)
                delay[u, f].append((lam, float(Q[v, g] * g_int[xn, u, y])))
                empty[u, f, xn][2].append((lam, float(Q[v, g])))

    # free >= indicator - alone - singleton mass, and free >= 0; the delay rows push it down to the max
    for (u, f, xn), (indicator, alone, mass) in empty.items():
        name = f"free_{u}_{f}" if xn is None else f"freex_{u}_{xn}_{f}"
        free = pulp.LpVariable(name, lowBound=0)
        var[name] = free
        prob += (free - indicator + pulp.lpSum(a * k for a, k in alone) + pulp.lpSum(lam * q for lam, q in mass)
                 >= 0, f"{name}_ge")
        delay[u, f].append((free, float(g_free[0 if xn is None else xn, u])))

    for (u, f), terms in delay.items():
        expr = pulp.LpAffineExpression([t for t in terms if t[1] != 0.0] + [(x[u, f], big_g)])
        prob += (expr <= D_th + big_g, f"delay_{u}_{f}")

    log.info("ILP with %d variables and %d constraints (big G %.4g)", len(var), len(prob.constraints), big_g)
    return IlpModel(problem=prob, variables=var, big_g=big_g, weights=Q)


def emit_ilp(model: IlpModel, path: str, fmt: str = "lp") -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    if fmt == "lp":
        model.problem.writeLP(tmp)
    elif fmt == "mps":
        model.problem.writeMPS(tmp)
    else:
        raise ValueError(f"unknown model format {fmt!r} (expected lp or mps)")
    os.replace(tmp, path)
    log.info("wrote %s model to %s", fmt.upper(), path)


# ---------- checking ----------

@attrs.frozen(eq=False)
class CheckReport:
    violations: tuple[Violation, ...]
    objective: float
    implied_sdr: float | None = None
    detail: str = ""

    @property
    def feasible(self) -> bool:
        return not self.violations


def _aux_values(aux) -> dict:
    """Auxiliary arrays are indexed in the same order as the emitted variable names."""
    out = {}
    for field in attrs.fields(type(aux)):
        arr = getattr(aux, field.name)
        for idx in zip(*np.nonzero(arr)):
            out[f"aux_{field.name}_" + "_".join(str(int(i)) for i in idx)] = 1
    return out


def model_values(assignment: Assignment, Q: np.ndarray) -> dict:
    """Value of every model variable implied by the binaries (names absent from the map are 0)."""
    aux = materialize_auxiliaries(assignment)
    values = _aux_values(aux)
    for u in range(assignment.num_users):
        for f in range(assignment.num_files):
            for xn, mass in empty_interferer_mass(aux, Q, u, f).items():
                values[f"free_{u}_{f}" if xn is None else f"freex_{u}_{xn}_{f}"] = mass
    for (i, f) in zip(*np.nonzero(assignment.caching)):
        values[f"c_{i}_{f}"] = 1
    for (u, w) in zip(*np.nonzero(assignment.channels)):
        values[f"r_{u}_{w}"] = 1
    if assignment.delivery is not None:
        for (u, f) in zip(*np.nonzero(assignment.delivery)):
            values[f"x_{u}_{f}"] = 1
    return values


def check_model_solution(model: IlpModel, assignment: Assignment, eps: float = 1e-9) -> CheckReport:
    """Plugs the assignment (and its implied auxiliaries) into the model and lists violated rows."""
    values = model_values(assignment, model.weights)
    for name, v in model.variables.items():
        v.varValue = values.get(name, 0)
    violations = []
    for name, con in model.problem.constraints.items():
        lhs = con.value()
        scale = max([1.0, abs(con.constant)] + [abs(a) for a in con.values()])
        tol = eps * scale
        if con.sense == pulp.LpConstraintLE:
            slack = -lhs
        elif con.sense == pulp.LpConstraintGE:
            slack = lhs
        else:
            slack = -abs(lhs)
        if slack < -tol:
            violations.append(Violation(name, (), float(slack)))
    objective = float(pulp.value(model.problem.objective) or 0.0)
    return CheckReport(violations=tuple(violations), objective=objective)


def check_solution(context: DeliveryContext, assignment: Assignment) -> CheckReport:
    """Constraint violations with slack, and the objective of the stated (or implied) deliveries."""
    inst = context.instance
    violations = list(structural_violations(inst, assignment))
    Q = context.Q
    detail = ""
    implied = None
    if any(v.constraint in ("single_copy", "one_channel") for v in violations):
        detail = "delay check skipped: assignment is not single-copy with one channel per user"
        G = None
    else:
        G = context.delay_matrix(assignment)
        implied = context.sdr(G)
    X = assignment.delivery
    if X is None:
        X = context.deliveries(G) if G is not None else np.zeros((inst.num_users, context.num_files), np.int8)
    elif G is not None:
        for u, f in zip(*np.nonzero(X)):
            if G[u, f] > context.D_th:
                violations.append(Violation("delay_threshold", (int(u), int(f)), float(context.D_th - G[u, f])))
    objective = float(np.sum(Q * X) / inst.num_users)
    for v in violations:
        log.warning("violated %s", v)
    return CheckReport(violations=tuple(violations), objective=objective, implied_sdr=implied, detail=detail)

