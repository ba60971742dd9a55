import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grulsif.estimator import Hyperparams, PairedNodeSamples, SolverConfig
from grulsif.graph import build_graph, sbm_generate
from grulsif.scenarios import generate_null, generate_scenario_I
from grulsif.two_sample import (
    DirectionSetup,
    PermutationConfig,
    TestReport,
    draw_permutation,
    graph_level_permutation,
    p_values,
    permutation_test,
    pooled_vectors,
    prepare_direction,
    run_test,
    symmetric_statistic,
)


def _samples(rng, N=3, n=4, n_p=5, d=2):
    return PairedNodeSamples(list(rng.standard_normal((N, n, d))),
                             list(rng.standard_normal((N, n_p, d))))


def _columns(s):
    """Sorted list of whole observation vectors (one tuple per column)."""
    Z = pooled_vectors(s)
    return sorted(tuple(Z[:, j].ravel()) for j in range(Z.shape[1]))


def _fixed_setups(s, g, hp=Hyperparams(0.1, 0.1, 0.1), **kw):
    d1 = prepare_direction(s, g, hp.alpha, False, hyperparams=hp, sigma=1.0, **kw)
    d2 = prepare_direction(s, g, hp.alpha, True, hyperparams=hp, sigma=1.0, **kw)
    return d1, d2


# --- permutation of whole vectors --------------------------------------------

def test_identity_permutation_is_noop(rng):
    s = _samples(rng)
    assert graph_level_permutation(s, np.arange(9)) == s


def test_swap_exchanges_pairs_at_every_node(rng):
    s = _samples(rng)
    tau = np.arange(9)
    tau[0], tau[4] = 4, 0
    t = graph_level_permutation(s, tau)
    for v in range(3):
        np.testing.assert_array_equal(t.X[v][0], s.Xp[v][0])
        np.testing.assert_array_equal(t.Xp[v][0], s.X[v][0])
        np.testing.assert_array_equal(t.X[v][1:], s.X[v][1:])
        np.testing.assert_array_equal(t.Xp[v][1:], s.Xp[v][1:])


@given(st.integers(0, 2**31 - 1))
def test_permutation_preserves_column_multiset(seed):
    r = np.random.default_rng(seed)
    s = _samples(r, N=int(r.integers(1, 5)), n=int(r.integers(1, 6)), n_p=int(r.integers(1, 6)))
    m = s.X[0].shape[0] + s.Xp[0].shape[0]
    t = graph_level_permutation(s, r.permutation(m))
    assert _columns(t) == _columns(s)
    assert t.X[0].shape == s.X[0].shape and t.Xp[0].shape == s.Xp[0].shape


def test_permutation_rejects_unequal_counts(rng):
    s = PairedNodeSamples([rng.standard_normal(3), rng.standard_normal(4)],
                          [rng.standard_normal(3), rng.standard_normal(3)])
    with pytest.raises(ValueError, match="same number"):
        graph_level_permutation(s, np.arange(6))


def test_permutation_rejects_non_permutation(rng):
    with pytest.raises(ValueError, match="permutation"):
        graph_level_permutation(_samples(rng), np.zeros(9, dtype=int))


def test_draw_permutation_independent_of_order():
    a = [draw_permutation(5, i, 10) for i in range(4)]
    b = [draw_permutation(5, i, 10) for i in reversed(range(4))][::-1]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], a[1])


# --- p-values ----------------------------------------------------------------

def test_single_permutation_below_observed_gives_zero():
    assert p_values([1.0, 0.0], [[0.5, 0.5]]).tolist() == [0.0, 1.0]


def test_ties_do_not_count_under_strict_inequality():
    assert p_values([2.0], [[2.0], [2.0], [2.0]]).tolist() == [0.0]


def test_conservative_variant():
    pv = p_values([2.0], [[2.0], [1.0], [3.0]], conservative=True)
    assert pv.tolist() == [3 / 4]


@given(st.integers(0, 2**31 - 1))
def test_p_values_bounded_and_monotone_in_statistic(seed):
    r = np.random.default_rng(seed)
    perm = r.standard_normal((int(r.integers(1, 30)), 4))
    lo = r.standard_normal(4)
    hi = lo + r.uniform(0, 2, 4)
    for cons in (False, True):
        a, b = p_values(lo, perm, cons), p_values(hi, perm, cons)
        assert np.all((a >= 0) & (a <= 1)) and np.all(b <= a)


def test_config_validation():
    with pytest.raises(ValueError):
        PermutationConfig(n_perm=0)
    for pi in (0.0, 1.0):
        with pytest.raises(ValueError):
            PermutationConfig(pi_star=pi)


# --- statistic -----------------------------------------------------------------

def test_identical_samples_give_near_zero_statistic():
    g = build_graph([(0, 1), (1, 2)], 3)
    r = np.random.default_rng(0)
    X = list(r.standard_normal((3, 200, 1)))
    s = PairedNodeSamples(X, [x.copy() for x in X])
    d1 = prepare_direction(s, g, 0.1, False, seed=1)
    d2 = prepare_direction(s, g, 0.1, True, seed=2)
    stat = symmetric_statistic(s, d1, d2)
    assert np.all(np.abs(stat) < 0.05)


def _single_node_stat(shift, seed):
    r = np.random.default_rng(seed)
    s = PairedNodeSamples([r.standard_normal((200, 1))], [r.normal(shift, 1, (200, 1))])
    g = build_graph([], 1)
    d1 = prepare_direction(s, g, 0.1, False, seed=1)
    d2 = prepare_direction(s, g, 0.1, True, seed=2)
    return symmetric_statistic(s, d1, d2)[0]


def test_large_shift_separates_from_null():
    null = max(_single_node_stat(0.0, seed) for seed in range(3))
    alt = min(_single_node_stat(5.0, seed) for seed in range(3))
    assert alt > 10 * max(null, 0.05)


def test_identical_nodes_on_complete_graph_give_constant_statistic():
    N = 4
    g = build_graph([(u, v) for u in range(N) for v in range(u + 1, N)], N)
    r = np.random.default_rng(1)
    x, xp = r.standard_normal((30, 1)), r.normal(1, 1, (30, 1))
    s = PairedNodeSamples([x] * N, [xp] * N)
    # the sweep order breaks the symmetry only until convergence
    stat = symmetric_statistic(s, *_fixed_setups(s, g, solver=SolverConfig(tol=1e-12)))
    np.testing.assert_allclose(stat, stat[0], rtol=1e-8)


# --- full test ---------------------------------------------------------------

@pytest.fixture(scope="module")
def scenario_run():
    g = sbm_generate([5, 5], 0.8, 0.05, 2)
    s, truth = generate_scenario_I(g, 30, 3)
    return g, s, truth


def _run(g, s, **kw):
    d1, d2 = _fixed_setups(s, g)
    cfg = PermutationConfig(**{"n_perm": 20, "seed": 4, **kw})
    return permutation_test(s, g, cfg, d1, d2)


def test_report_invariants(scenario_run):
    g, s, _ = scenario_run
    rep = _run(g, s)
    assert rep.perm_stats.shape == (20, g.n_nodes)
    assert np.all(np.isfinite(rep.stat))
    assert np.all((rep.p_values >= 0) & (rep.p_values <= 1))
    assert rep.detected == frozenset(np.flatnonzero(rep.p_values < 0.05).tolist())
    assert rep.detected_at(0.5) >= rep.detected
    np.testing.assert_allclose(rep.stat, symmetric_statistic(s, *rep.setups))


def test_report_deterministic(scenario_run):
    g, s, _ = scenario_run
    a, b = _run(g, s), _run(g, s)
    np.testing.assert_array_equal(a.stat, b.stat)
    np.testing.assert_array_equal(a.perm_stats, b.perm_stats)
    assert not np.array_equal(a.perm_stats, _run(g, s, seed=5).perm_stats)


def test_single_permutation(scenario_run):
    g, s, _ = scenario_run
    rep = _run(g, s, n_perm=1)
    expected = (rep.perm_stats[0] > rep.stat).astype(float)
    np.testing.assert_array_equal(rep.p_values, expected)
    assert rep.detected == frozenset(np.flatnonzero(expected == 0).tolist())


def test_graph_size_mismatch(scenario_run):
    g, s, _ = scenario_run
    with pytest.raises(ValueError, match="nodes"):
        _run(build_graph([], 3), s)


def test_report_export(scenario_run, tmp_path):
    g, s, _ = scenario_run
    rep = _run(g, s)
    rep.write_json(tmp_path / "r.json")
    rep.write_csv(tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [row["node_id"] for row in doc["nodes"]] == list(range(g.n_nodes))
    assert doc["metadata"]["n_perm"] == 20 and doc["metadata"]["seed"] == 4
    assert doc["setups"][0]["reverse"] is False and doc["setups"][1]["reverse"] is True
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,node_id,statistic,p_value,detected"
    first = lines[1].split(",")
    assert first[0] == "grulsif" and float(first[2]) == rep.stat[0]


def test_run_test_flags_perturbed_nodes():
    g = sbm_generate([6, 6], 0.8, 0.05, 0)
    r = np.random.default_rng(8)
    X = list(r.standard_normal((12, 60, 1)))
    Xp = [r.normal(3.0 if v < 6 else 0.0, 1, (60, 1)) for v in range(12)]
    rep = run_test(PairedNodeSamples(X, Xp), g, PermutationConfig(n_perm=20, pi_star=0.1))
    assert set(range(6)) <= rep.detected
    assert isinstance(rep, TestReport) and isinstance(rep.setups[0], DirectionSetup)


def test_null_p_values_spread_out():
    g = sbm_generate([5, 5], 0.8, 0.05, 1)
    s, _ = generate_null(g, 30, 6)
    rep = _run(g, s, n_perm=40)
    assert 0.1 < rep.p_values.mean() < 0.9
