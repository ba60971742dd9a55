import numpy as np
import pytest
from scipy import stats

from grulsif.graph import build_graph, sbm_generate
from grulsif.scenarios import (
    TABLE_COLUMNS,
    ScenarioSpec,
    detection_metrics,
    generate_null,
    generate_scenario_I,
    generate_scenario_II,
    read_report_p_values,
    run_experiment,
    scenario_II_clusters,
    score_p_values,
    write_table,
)

BIG = 100_000


@pytest.fixture(scope="module")
def small_sbm():
    return sbm_generate([2, 2, 2], 1.0, 0.0, 0)


@pytest.fixture(scope="module")
def four_blocks():
    return sbm_generate([2, 2, 2, 2], 1.0, 0.0, 0)


# --- scenario I ---------------------------------------------------------------

def test_scenario_I_laws(small_sbm):
    s, truth = generate_scenario_I(small_sbm, BIG, 1)
    c1, c2, c3 = small_sbm.clusters()
    assert truth == frozenset(c1.tolist() + c2.tolist())
    for v in c1:
        assert s.Xp[v].min() >= -1 and s.Xp[v].max() <= 1
        assert s.Xp[v].var() == pytest.approx(1 / 3, abs=0.01)
    for v in c2:
        assert s.Xp[v].mean() == pytest.approx(1.0, abs=0.02)
    for v in range(small_sbm.n_nodes):
        assert s.X[v].mean() == pytest.approx(0.0, abs=0.02)
        assert s.X[v].std() == pytest.approx(1.0, abs=0.02)
    assert s.dim == 1


def test_scenario_I_null_nodes_share_law(small_sbm):
    s, truth = generate_scenario_I(small_sbm, 10_000, 2)
    for v in set(range(small_sbm.n_nodes)) - truth:
        assert stats.ks_2samp(s.X[v][:, 0], s.Xp[v][:, 0]).pvalue > 1e-3


def test_scenario_I_needs_clusters():
    with pytest.raises(ValueError, match="cluster"):
        generate_scenario_I(build_graph([(0, 1)], 2), 5, 0)
    with pytest.raises(ValueError, match="at least 2"):
        generate_scenario_I(sbm_generate([3], 0.5, 0.0, 0), 5, 0)


def test_generators_deterministic(small_sbm):
    a, _ = generate_scenario_I(small_sbm, 20, 7)
    b, _ = generate_scenario_I(small_sbm, 20, 7)
    c, _ = generate_scenario_I(small_sbm, 20, 8)
    assert a == b and not a == c


def test_null_scenario(small_sbm):
    s, truth = generate_null(small_sbm, 50, 0)
    assert truth == frozenset() and s.n_nodes == small_sbm.n_nodes


# --- scenario II --------------------------------------------------------------

@pytest.mark.parametrize("selected", [(0, 1), (2, 3)])
def test_scenario_II_laws(four_blocks, selected):
    s, truth = generate_scenario_II(four_blocks, BIG, 3, selected)
    clusters = four_blocks.clusters()
    assert truth == frozenset(np.concatenate([clusters[c] for c in selected]).tolist())
    base_rho = (-0.8, -0.8, 0.8, 0.0)
    pert_rho = (0.8, 0.0, 0.0, 0.0)
    for c, members in enumerate(clusters):
        for v in members:
            assert np.cov(s.X[v].T)[0, 1] == pytest.approx(base_rho[c], abs=0.01)
            rho = pert_rho[c] if c in selected else base_rho[c]
            assert np.cov(s.Xp[v].T)[0, 1] == pytest.approx(rho, abs=0.01)
            np.testing.assert_allclose(s.Xp[v].var(axis=0), 1.0, atol=0.02)
            mean = (1.0, 1.0) if c == 3 and c in selected else (0.0, 0.0)
            np.testing.assert_allclose(s.Xp[v].mean(axis=0), mean, atol=0.02)


def test_scenario_II_random_choice(four_blocks):
    draws = {scenario_II_clusters(seed) for seed in range(60)}
    assert all(len(d) == 2 and d[0] < d[1] for d in draws)
    assert len(draws) == 6
    _, truth = generate_scenario_II(four_blocks, 5, 11)
    chosen = scenario_II_clusters(11)
    assert truth == frozenset(np.concatenate([four_blocks.clusters()[c] for c in chosen]).tolist())


def test_scenario_II_needs_four_clusters(small_sbm):
    with pytest.raises(ValueError, match="4 clusters"):
        generate_scenario_II(small_sbm, 5, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec("III")
    with pytest.raises(ValueError):
        ScenarioSpec(n=0)
    with pytest.raises(ValueError):
        ScenarioSpec("II", perturbed_clusters=(0, 4))


# --- metrics --------------------------------------------------------------------

@pytest.mark.parametrize("true,pred,expected", [
    ({0, 1}, {0, 1}, (1.0, 1.0, 1.0)),
    ({0, 1}, set(), (0.0, 0.0, 0.0)),
    ({0, 1, 2, 3}, {2, 3, 4, 5}, (0.5, 0.5, 0.5)),
    (set(), set(), (1.0, 1.0, 1.0)),
    (set(), {3}, (1.0, 0.0, 0.0)),
    ({0, 1, 2, 3}, {0}, (0.25, 1.0, 0.4)),
])
def test_detection_metrics(true, pred, expected):
    m = detection_metrics(true, pred, 6)
    assert (m.recall, m.precision, m.f1) == pytest.approx(expected)


def test_detection_metrics_range():
    with pytest.raises(ValueError):
        detection_metrics({0}, {9}, 5)


def test_score_report_tables(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("method,node_id,statistic,p_value,detected\n"
                    "external,0,,0.001,\nexternal,1,,0.03,\nexternal,2,,0.4,\nours,0,1.0,0.2,false\n")
    tables = read_report_p_values(path)
    assert tables == {"external": {0: 0.001, 1: 0.03, 2: 0.4}, "ours": {0: 0.2}}
    scores = score_p_values(tables["external"], {0, 2}, (0.01, 0.05))
    assert (scores[0.01].recall, scores[0.01].precision) == (0.5, 1.0)
    assert (scores[0.05].recall, scores[0.05].precision) == (0.5, 0.5)


def test_score_report_rejects_bad_rows(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("method,node_id,p_value\nx,0,1.5\n")
    with pytest.raises(ValueError, match="row 2"):
        read_report_p_values(path)
    path.write_text("method,p_value\nx,0.5\n")
    with pytest.raises(ValueError, match="node_id"):
        read_report_p_values(path)


# --- experiment driver ------------------------------------------------------------

TINY = ScenarioSpec("I", n=15, seed=3, cluster_sizes=(4, 4, 4), p_in=0.8, p_out=0.05)


def test_single_repetition_has_zero_std():
    res = run_experiment(TINY, "pool", repetitions=1, n_perm=5)
    for row in res.rows():
        assert row["f1_std"] == row["recall_std"] == row["precision_std"] == 0.0


def test_experiment_table_deterministic(tmp_path):
    tables = []
    for k in range(2):
        res = run_experiment(TINY, "rulsif", repetitions=2, n_perm=5)
        write_table([res], tmp_path / f"t{k}.csv")
        tables.append((tmp_path / f"t{k}.csv").read_text())
    assert tables[0] == tables[1]
    lines = tables[0].splitlines()
    assert lines[0] == ",".join(TABLE_COLUMNS)
    assert len(lines) == 3 and lines[1].startswith("I,rulsif,15,0.01,")


def test_experiment_independent_of_jobs():
    a = run_experiment(TINY, "pool", repetitions=2, n_perm=5)
    b = run_experiment(TINY, "pool", repetitions=2, n_perm=5, n_jobs=2)
    for pa, pb in zip(a.p_values, b.p_values):
        np.testing.assert_array_equal(pa, pb)


def test_unknown_method():
    with pytest.raises(ValueError):
        run_experiment(TINY, "kliep")
