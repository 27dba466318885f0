import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import ConfigError
from popularity import build_popularity
from topology import MBS, NetworkInstance, NodeId, NodeKind, RadioParams, generate, load_instance, save_instance


@pytest.fixture(scope="module")
def params(default_cfg):
    return RadioParams.from_config(default_cfg)


def two_node(params, ue_xy):
    return NetworkInstance(params=params, positions=np.array([[0.0, 0.0], ue_xy]), num_sbs=0, num_users=1)


def test_default_scale_instance(params):
    inst = generate(0, 22, 4, params)
    assert inst.num_nodes == 27
    radii = np.hypot(inst.positions[:, 0], inst.positions[:, 1])
    assert radii[0] == 0.0
    assert np.all(radii[1:5] <= 71.0)
    assert np.all(radii[5:] <= 100.0)


def test_minimal_instance(params):
    inst = generate(3, 1, 0, params)
    assert inst.num_nodes == 2
    assert inst.nodes() == (MBS, NodeId(NodeKind.UE, 1))


def test_same_seed_same_instance(params):
    a = generate(11, 10, 2, params)
    b = generate(11, 10, 2, params)
    assert a.same_as(b)
    assert not a.same_as(generate(12, 10, 2, params))


def test_min_separation_respected(params):
    inst = generate(5, 22, 4, params)
    pts = inst.positions
    gaps = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(gaps, np.inf)
    assert gaps[:, 1 + inst.num_sbs:].min() >= params.min_separation


def test_invalid_ranges_rejected(params):
    with pytest.raises(ConfigError):
        generate(0, 0, 1, params)
    with pytest.raises(ConfigError):
        generate(0, 3, -1, params)


def test_distance_345(params):
    inst = two_node(params, [30.0, 40.0])
    assert inst.distance(MBS, NodeId(NodeKind.UE, 1)) == pytest.approx(50.0)
    assert inst.distance(1, 1) == 0.0


def test_unknown_node(params):
    inst = two_node(params, [30.0, 40.0])
    with pytest.raises(KeyError):
        inst.distance(0, 5)
    with pytest.raises(KeyError):
        inst.node_index(NodeId(NodeKind.SBS, 1))


def test_theta_unit_and_double_distance(params):
    assert params.P_m == 1.0 and params.noise_power == 0.01 and params.alpha == 3.0
    assert two_node(params, [1.0, 0.0]).theta(0, 1) == pytest.approx(100.0)
    assert two_node(params, [2.0, 0.0]).theta(0, 1) == pytest.approx(12.5)


def test_theta_needs_distinct_nodes(params):
    with pytest.raises(ValueError):
        two_node(params, [2.0, 0.0]).theta(1, 1)


def test_theta_scales_with_power_and_noise(params):
    base = two_node(params, [7.0, 3.0]).theta(0, 1)
    louder = NetworkInstance(params=RadioParams(**{**params.to_dict(), "P_m": 2.0}),
                             positions=np.array([[0.0, 0.0], [7.0, 3.0]]), num_sbs=0, num_users=1)
    noisier = NetworkInstance(params=RadioParams(**{**params.to_dict(), "noise_power": 0.04}),
                              positions=np.array([[0.0, 0.0], [7.0, 3.0]]), num_sbs=0, num_users=1)
    assert louder.theta(0, 1) == pytest.approx(2.0 * base)
    assert noisier.theta(0, 1) == pytest.approx(base / 4.0)


def test_capacity_slots(params):
    inst = generate(0, 2, 1, params)
    assert inst.capacities().tolist() == [5, 2, 1, 1]
    assert inst.reuse_limit == math.ceil(2 / params.W)


def test_power_by_node_kind(params):
    inst = generate(0, 2, 1, params)
    assert inst.power(MBS) == params.P_m
    assert inst.power(NodeId(NodeKind.SBS, 1)) == params.P_S
    assert [inst.power(i) for i in (2, 3)] == [params.P_U, params.P_U]


def test_positions_outside_cell_rejected(params):
    with pytest.raises(ConfigError):
        two_node(params, [101.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-70, 70), st.floats(-70, 70)), min_size=2, max_size=6),
       st.data())
def test_distance_symmetric(params, points, data):
    inst = NetworkInstance(params=params, positions=np.array([[0.0, 0.0]] + points), num_sbs=0,
                           num_users=len(points))
    i = data.draw(st.integers(0, inst.num_nodes - 1))
    j = data.draw(st.integers(0, inst.num_nodes - 1))
    assert inst.distance(i, j) == inst.distance(j, i) >= 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 60.0), st.floats(1.0, 30.0))
def test_theta_decreases_with_distance(params, near, extra):
    a = two_node(params, [near, 0.0]).theta(0, 1)
    b = two_node(params, [near + extra, 0.0]).theta(0, 1)
    assert b < a


def test_instance_file_round_trip(params, tmp_path):
    inst = generate(7, 5, 2, params)
    pop = build_popularity(5, params.F, seed=3)
    path = tmp_path / "instance.yaml"
    save_instance(str(path), inst, pop, meta={"seed": 7})
    back, back_pop = load_instance(str(path))
    assert back.same_as(inst)
    assert np.array_equal(back_pop.ranks, pop.ranks)
    assert np.array_equal(back_pop.Q, pop.Q)


def test_instance_file_dimension_mismatch(params, tmp_path):
    inst = generate(7, 5, 2, params)
    pop = build_popularity(4, params.F, seed=3)
    path = tmp_path / "bad.yaml"
    save_instance(str(path), inst, pop)
    with pytest.raises(ConfigError):
        load_instance(str(path))
