import itertools
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphac.arena import MatchResult, SeedRun, TrainConfig
from graphac.errors import ContractError, SpecValidationError
from graphac.graphs import generate_synthetic_dataset
from graphac.models import ModelSpec
from graphac.tournament import (assemble_report, check_consistency, emit_report, extract_ranking, read_diff_matrix,
                                run_tournament, schedule_double_round_robin)


def fake_result(mean, std=0.1, collapsed=None):
    """MatchResult whose seed finals have the requested mean and sample std."""
    spec = ModelSpec(num_layers=1, hidden_dim=2, output_dim=2)
    r = MatchResult(spec, spec, collapsed=collapsed)
    if collapsed is None:
        for seed, v in enumerate([mean - std, mean, mean + std]):
            traj = {"epoch": [1], "loss_a": [v], "loss_b": [0.0], "diff": [v], "inv_term": [0.0],
                    "upper_tri": [0.0], "lower_tri": [0.0], "cov_term": [0.0]}
            r.runs.append(SeedRun(seed, traj, v, np.array([0.6, 0.4]), np.array([0.7, 0.3])))
    return r


def report_from(means, names=None, std=0.1):
    n = len(means)
    names = names or [f"m{k}" for k in range(n)]
    results = {(i, j): fake_result(means[i][j], std) for i in range(n) for j in range(n)}
    return assemble_report(names, results)


# ---------------------------------------------------------------- schedule


def test_schedule_examples():
    specs = [ModelSpec(num_layers=k) for k in (1, 2, 3, 4, 5)]
    plan = schedule_double_round_robin(specs[:2])
    assert plan.schedule == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert len(schedule_double_round_robin(specs).schedule) == 25
    assert schedule_double_round_robin(specs[:1]).schedule == [(0, 0)]


def test_schedule_names_and_errors():
    plan = schedule_double_round_robin([("deep", ModelSpec(num_layers=6)), ("shallow", ModelSpec(num_layers=2))])
    assert plan.names == ["deep", "shallow"]
    with pytest.raises(SpecValidationError, match="duplicate"):
        schedule_double_round_robin([("x", ModelSpec()), ("x", ModelSpec(num_layers=2))])
    with pytest.raises(ContractError):
        schedule_double_round_robin([])


# ---------------------------------------------------------------- ranking


def test_two_model_ranking():
    ranking = extract_ranking([[0, 2], [-2, 0]], ["m0", "m1"])
    assert [name for name, _ in ranking] == ["m1", "m0"]
    assert ranking[0][1] == 2.0


def test_all_zero_is_name_order():
    ranking = extract_ranking(np.zeros((3, 3)), ["c", "a", "b"])
    assert [name for name, _ in ranking] == ["a", "b", "c"]
    assert all(score == 0 for _, score in ranking)


def agreement(order, d):
    pos = {m: k for k, m in enumerate(order)}
    return sum(1 for i in range(len(d)) for j in range(len(d))
               if i != j and pos[i] < pos[j] and d[i][j] - d[j][i] < 0)


@given(st.lists(st.integers(-20, 20), min_size=3, max_size=3, unique=True))
@settings(max_examples=50, deadline=None)
def test_three_model_ranking_maximises_agreement(latent):
    s = np.array(latent)
    d = -(s[:, None] - s[None, :])  # better latent score -> lower own loss
    got = [int(name) for name, _ in extract_ranking(d)]
    best = max(itertools.permutations(range(3)), key=lambda o: agreement(o, d))
    assert tuple(got) == best


@given(st.integers(2, 6), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_latent_scores_recovered(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.permutation(n) + rng.uniform(0, 0.5)
    d = 0.3 * (s[None, :] - s[:, None])
    got = [int(name) for name, _ in extract_ranking(d)]
    assert got == list(np.argsort(-s))


@given(st.integers(2, 5), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_ranking_ignores_symmetric_part(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, n))
    sym = rng.normal(size=(n, n))
    a = extract_ranking(d)
    b = extract_ranking(d + sym + sym.T)
    assert [x for x, _ in a] == [x for x, _ in b]
    np.testing.assert_allclose([v for _, v in a], [v for _, v in b], atol=1e-12)


def test_ranking_needs_square():
    with pytest.raises(ContractError):
        extract_ranking(np.zeros((2, 3)))


# ---------------------------------------------------------------- consistency


def test_antisymmetric_matrix_is_consistent():
    rep = report_from([[0, 1, 2], [-1, 0, 1], [-2, -1, 0]])
    c = rep.consistency
    assert c["max_antisymmetry_ratio"] == 0.0 and c["violations"] == []
    assert c["self_play_ratio"] == 0.0
    assert [name for name, _ in rep.ranking] == ["m2", "m1", "m0"]


def test_margin_violation_flagged():
    # 0 beats 1 by a lot but 0 beats 2 by less, though 1 beats 2
    d = [[0, 1, 0.5], [-1, 0, 0.4], [-0.5, -0.4, 0]]
    rep = report_from([[-x for x in row] for row in d])
    assert [n for n, _ in rep.ranking] == ["m0", "m1", "m2"]
    assert rep.consistency["violations"] == [("m0", "m1", "m2")]


def test_single_model_vacuous():
    rep = report_from([[0.01]])
    assert rep.consistency["violations"] == [] and rep.consistency["antisymmetry"] == {}


def test_residual_ratio_uses_pooled_std():
    rep = report_from([[0, 0.5], [-0.3, 0]], std=0.1)
    ratio = rep.consistency["antisymmetry"][(0, 1)]["ratio"]
    assert ratio == pytest.approx(0.2 / 0.1)


def test_aborted_match_is_recorded_not_fatal():
    names = ["a", "b"]
    results = {(0, 0): fake_result(0.0), (0, 1): fake_result(0.4),
               (1, 0): fake_result(0.0, collapsed="collapse at epoch 3"), (1, 1): fake_result(0.0)}
    rep = assemble_report(names, results)
    assert rep.aborted == [(1, 0)]
    assert np.isnan(rep.means[1, 0])
    assert [n for n, _ in rep.ranking] == ["b", "a"]
    assert rep.consistency["aborted"] == [[1, 0]]


# ---------------------------------------------------------------- report files


def test_emit_report_files(tmp_path):
    rep = report_from([[0.0123456789, 0.5], [-0.49, -0.002]], names=["PNA-L2", "PNA-L4"])
    emit_report(rep, tmp_path)
    lines = (tmp_path / "diff_matrix.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].split(",")[1:] == ["PNA-L2", "PNA-L4"]
    assert all(len(line.split(",")) == 3 and line.count("±") == 2 for line in lines[1:])
    names, means, stds = read_diff_matrix(tmp_path / "diff_matrix.csv")
    assert names == rep.names
    np.testing.assert_allclose(means, np.round(rep.means, 4), rtol=0, atol=1e-9)
    np.testing.assert_allclose(stds, np.round(rep.stds, 4), rtol=0, atol=1e-9)
    full = json.loads((tmp_path / "report.json").read_text())
    np.testing.assert_allclose(full["means"], rep.means, rtol=0, atol=1e-9)
    md = (tmp_path / "report.md").read_text()
    assert "negative value means gnn_a wins" in md.lower()
    ranking = (tmp_path / "ranking.csv").read_text().splitlines()
    assert ranking[0] == "rank,name,score" and ranking[1].startswith("1,PNA-L4,")
    assert "antisymmetry" in (tmp_path / "consistency.txt").read_text()
    root = ET.parse(tmp_path / "heatmap.svg").getroot()
    cells = [e for e in root.iter() if e.tag.endswith("rect") and e.get("class") == "cell"]
    assert len(cells) == 4
    assert len(list((tmp_path / "matches").glob("*.csv"))) == 4 * 3


def test_heatmap_scale_is_symmetric(tmp_path):
    rep = report_from([[0, 1.0], [-0.25, 0]])
    emit_report(rep, tmp_path)
    cells = {e.get("x") + "," + e.get("y"): e.get("fill")
             for e in ET.parse(tmp_path / "heatmap.svg").getroot().iter() if e.get("class") == "cell"}
    fills = sorted(cells.values())
    assert "#ff0000" in fills  # +max is full red
    assert "#ffffff" in fills  # zero is white


def test_emit_report_surfaces_path_on_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_report(report_from([[0.0]]), blocker / "sub")


# ---------------------------------------------------------------- running


@pytest.fixture(scope="module")
def tiny_plan():
    data = generate_synthetic_dataset(seed=4, count=80)
    cfg = TrainConfig(epochs=2, eval_window=1, seeds=(0, 1), batch_size=16)
    pool = [("s", ModelSpec(num_layers=1, hidden_dim=4, output_dim=6)),
            ("d", ModelSpec(num_layers=2, hidden_dim=4, output_dim=6))]
    return schedule_double_round_robin(pool, config=cfg, dataset=data)


def test_run_tournament_worker_count_does_not_matter(tiny_plan, tmp_path):
    r1 = run_tournament(tiny_plan, workers=1)
    r2 = run_tournament(tiny_plan, workers=2)
    emit_report(r1, tmp_path / "w1")
    emit_report(r2, tmp_path / "w2")
    for f in ("diff_matrix.csv", "ranking.csv", "report.json", "heatmap.svg"):
        assert (tmp_path / "w1" / f).read_bytes() == (tmp_path / "w2" / f).read_bytes()
    assert len(r1.results) == 4
    # seat swap of the same two players flips the sign exactly
    np.testing.assert_allclose(r1.means[0, 1], -r1.means[1, 0], atol=1e-12)


def test_identical_pool_entries_near_zero(tiny_plan):
    plan = schedule_double_round_robin([("a", tiny_plan.pool[0]), ("b", tiny_plan.pool[0].with_seed(1))],
                                       config=tiny_plan.config, dataset=tiny_plan.dataset)
    rep = run_tournament(plan)
    assert np.all(np.isfinite(rep.means))
    assert check_consistency(rep)["max_antisymmetry_ratio"] < 1e-6
