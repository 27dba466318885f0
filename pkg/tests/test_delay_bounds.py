import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from delay_bounds import (LN2, SHARED_CURVES, ZETA_MEMO_SIZE, ChernoffCurve, DelayBoundTable, LinkBoundParams,
                          curve_for, expected_delay_bound, log_mean_z, mean_z, shared_curve_info, zeta, zeta0,
                          zeta1)
from errors import MissingBoundError, SeriesTruncationError
from montecarlo import TrialConfig, sample_delay

LOAD = 100 / (0.01 * 1e6)


def mean_z_by_quadrature(theta, t):
    s = t / LN2
    value, _ = integrate.quad(lambda x: (1.0 + theta * x) ** -s * math.exp(-x), 0.0, math.inf,
                              epsabs=0.0, epsrel=1e-11, limit=400)
    return value


@pytest.mark.parametrize("theta", [0.02, 0.1, 0.5, 1.0, 100.0, 1e4])
@pytest.mark.parametrize("t", [0.05, 0.3, 1.0, 4.0])
def test_mean_z_matches_quadrature(theta, t):
    assert mean_z(theta, t) == pytest.approx(mean_z_by_quadrature(theta, t), rel=1e-7)


def test_mean_z_continuous_across_direct_threshold():
    below = log_mean_z(0.1, 0.7)
    above = log_mean_z(0.1 * (1 + 1e-9), 0.7)
    assert below == pytest.approx(above, rel=1e-6)


def test_link_params_validated():
    with pytest.raises(ValueError):
        LinkBoundParams(theta=0.0)
    with pytest.raises(ValueError):
        LinkBoundParams(theta=1.0, interferers=(-2.0,))
    with pytest.raises(ValueError):
        LinkBoundParams(theta=1.0, load=0.0)


def test_kappa_single_interferer():
    assert LinkBoundParams(theta=100.0, interferers=(10.0,)).log_kappa == pytest.approx(math.log(11.0))
    two = LinkBoundParams(theta=100.0, interferers=(10.0, 5.0))
    assert two.log_kappa == pytest.approx(math.log(16.0) - math.log(100.0))


def test_zeta0_non_increasing_in_T():
    params = LinkBoundParams(theta=100.0, load=LOAD)
    values = [zeta0(params, T) for T in range(1, 21)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= 1.0 for v in values)


def test_zeta0_vanishes_at_huge_snr():
    params = LinkBoundParams(theta=1e9, load=LOAD)
    assert zeta0(params, 1) < 1e-6


def test_zeta0_rejects_zero_slots():
    with pytest.raises(ValueError):
        zeta0(LinkBoundParams(theta=10.0), 0)


def test_zeta1_needs_interferers():
    with pytest.raises(ValueError):
        zeta1(LinkBoundParams(theta=100.0, load=LOAD), 1)


def test_zeta_dispatches():
    clean = LinkBoundParams(theta=50.0, load=LOAD)
    hit = LinkBoundParams(theta=50.0, interferers=(3.0,), load=LOAD)
    assert zeta(clean, 2) == zeta0(clean, 2)
    assert zeta(hit, 2) == zeta1(hit, 2)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1.0, 10.0, 100.0, 1000.0]), st.sampled_from([0.5, 1.0, 10.0, 100.0]),
       st.integers(1, 12))
def test_interference_never_helps(theta, other, T):
    clean = LinkBoundParams(theta=theta, load=LOAD)
    hit = LinkBoundParams(theta=theta, interferers=(other,), load=LOAD)
    stronger = LinkBoundParams(theta=theta, interferers=(other * 2,), load=LOAD)
    assert zeta1(hit, T) >= zeta0(clean, T) * (1 - 1e-9)
    assert zeta1(stronger, T) >= zeta1(hit, T)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 500.0), st.floats(1.5, 10.0), st.integers(1, 12))
def test_zeta0_non_increasing_in_theta(theta, factor, T):
    weak = LinkBoundParams(theta=theta, load=LOAD)
    strong = LinkBoundParams(theta=theta * factor, load=LOAD)
    assert zeta0(strong, T) <= zeta0(weak, T) * (1 + 1e-6)


def test_strong_link_takes_one_slot():
    bound = expected_delay_bound(LinkBoundParams(theta=1e9, load=LOAD))
    assert bound.converged
    assert bound.value == pytest.approx(1.0, abs=1e-3)


def test_interfered_bound_not_below_clean():
    clean = expected_delay_bound(LinkBoundParams(theta=20.0, load=LOAD)).value
    hit = expected_delay_bound(LinkBoundParams(theta=20.0, interferers=(5.0,), load=LOAD)).value
    assert hit >= clean >= 1.0


def test_edge_tail_matches_long_sum():
    params = LinkBoundParams(theta=0.5, interferers=(0.2,), load=0.5)
    closed = expected_delay_bound(params, rel_tol=1e-12)
    curve = curve_for(params.theta, params.load)
    long_sum = 1.0 + math.fsum(curve.zeta(T, params.log_kappa).value for T in range(1, 4000))
    assert closed.value == pytest.approx(long_sum, rel=1e-5)


def test_divergent_link_raises():
    params = LinkBoundParams(theta=0.01, interferers=(1000.0,), load=LOAD)
    assert curve_for(params.theta, params.load).diverges(params.log_kappa)
    with pytest.raises(SeriesTruncationError):
        expected_delay_bound(params)


def test_curve_memoises_points():
    curve = ChernoffCurve(100.0, LOAD)
    first = curve.zeta(3)
    assert curve.zeta(3) is first
    assert 0.0 < first.t <= curve.bracket[1]
    info = curve.memo_info()
    assert info.hits == 1 and info.currsize == 1
    assert info.maxsize == ZETA_MEMO_SIZE


def test_shared_curves_are_bounded():
    for k in range(SHARED_CURVES + 5):
        curve_for(1.0 + k, LOAD, grid_points=16)
    info = shared_curve_info()
    assert info.maxsize == SHARED_CURVES
    assert info.currsize <= SHARED_CURVES


def test_bound_covers_simulated_mbs_link(default_cfg):
    # MBS -> UE at 50 m with default radio settings
    theta = default_cfg["P_m"] / default_cfg["noise_power"] * (50.0 / default_cfg["d0"]) ** -default_cfg["alpha"]
    params = LinkBoundParams(theta=theta, load=LOAD)
    dist = sample_delay(TrialConfig(theta=theta, load=LOAD, trials=10_000, seed=5))
    assert expected_delay_bound(params).value >= dist.mean() - 3 * dist.mean_stderr()
    for T in range(1, 6):
        assert zeta0(params, T) >= dist.exceedance(T) - 3 * dist.stderr(T)


# ---------- table ----------

@pytest.fixture(scope="module")
def table(tiny_context):
    return tiny_context.bounds


def test_table_shapes_and_structure(table):
    inst = table.instance
    g_free, g_int = table.arrays()
    n, U = inst.num_nodes, inst.num_users
    assert g_free.shape == (n, U)
    assert g_int.shape == (n, U, n)
    for u in range(U):
        un = inst.user_node(u)
        assert g_free[un, u] == 0.0
        assert np.all(g_int[un, u] == 0.0)
        assert np.all(g_int[:, u, un] == 0.0)
        for x in range(n):
            assert g_int[x, u, x] == 0.0
            if x != un:
                assert g_free[x, u] >= 1.0
                others = [y for y in range(n) if y not in (x, un)]
                assert np.all(g_int[x, u, others] >= g_free[x, u])


def test_table_arrays_read_only(table):
    g_free, _g_int = table.arrays()
    with pytest.raises(ValueError):
        g_free[0, 0] = 3.0


def test_table_missing_triples(table):
    un = table.instance.user_node(0)
    with pytest.raises(MissingBoundError):
        table.bound(un, 0)
    with pytest.raises(MissingBoundError):
        table.bound(0, 0, 0)
    with pytest.raises(MissingBoundError):
        table.bound(0, 0, un)


def test_table_caps_unbounded_links(tiny_context):
    inst = tiny_context.instance
    tight = DelayBoundTable(inst, g_cap=1.5)
    g_free, g_int = tight.arrays()
    assert g_free.max() <= 1.5 and g_int.max() <= 1.5
    assert tight.capped > 0
    assert tight.max_bound() == 1.5


def test_build_evaluates_everything(tiny_context):
    table = DelayBoundTable.build(tiny_context.instance)
    assert table._arrays is not None


def test_curves_csv(table):
    text = table.dump_curves_csv([(0, 0, None), (0, 1, 1)], range(1, 4))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 6
    assert rows[0]["y"] == "" and rows[3]["y"] == "1"
    assert all(0.0 <= float(r["zeta"]) <= 1.0 for r in rows)
    assert float(rows[0]["G"]) == table.free(0, 0)


def test_tables_keep_their_own_curves(tiny_context):
    inst = tiny_context.instance
    first = DelayBoundTable.build(inst)
    second = DelayBoundTable(inst)
    assert first._curves and not second._curves
    assert len(first._curves) <= inst.num_nodes * inst.num_users
    second.arrays()
    assert all(first._curves[k] is not second._curves[k] for k in first._curves)
    np.testing.assert_array_equal(first.arrays()[0], second.arrays()[0])
