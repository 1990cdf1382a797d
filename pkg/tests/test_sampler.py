import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloomcoreset import sampler as sampler_mod
from bloomcoreset.cbf import CountingBloomFilter
from bloomcoreset.embedding_io import binarize, normalize
from bloomcoreset.exceptions import DimError, EmptyCandidateError, EmptyInputError
from bloomcoreset.sampler import (
    CandidateSet,
    SamplerConfig,
    ScoreTable,
    budget_count_for,
    build_fingerprint,
    ranked_row,
    refine,
    sample_coreset,
    score,
    screen,
    select_from_pool,
)

import oracles


def unit_rows(rng, n, d):
    return normalize(rng.standard_normal((n, d)))


def all_candidates(matrix):
    return CandidateSet(np.arange(matrix.shape[0], dtype=np.int64), matrix)


# -- configuration -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(budget_fraction=0)
    with pytest.raises(ValueError):
        SamplerConfig(budget_fraction=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="mean")
    assert SamplerConfig().strategy == "max"
    assert SamplerConfig().budget_fraction == 0.01


@pytest.mark.parametrize(
    "fraction, n, expected",
    [(0.01, 10000, 100), (0.07, 100, 7), (0.01, 1, 1), (1.0, 37, 37), (0.5, 3, 2), (0.001, 2500, 3)],
)
def test_budget_count(fraction, n, expected):
    assert budget_count_for(fraction, n) == expected


# -- build_fingerprint -------------------------------------------------------


def test_fingerprint_default_sizing():
    rng = np.random.default_rng(0)
    filt = build_fingerprint(unit_rows(rng, 3500, 32))
    assert filt.size == 10000
    assert filt.inserted == 3500
    assert filt.frozen


def test_fingerprint_single_row():
    rng = np.random.default_rng(1)
    row = unit_rows(rng, 1, 512)
    filt = build_fingerprint(row, SamplerConfig(filter_size=100003))
    nz = filt.counters[filt.counters > 0]
    assert nz.size <= 10
    assert np.all(nz == 1)
    # default sizing gives 3 counters, so the ten hashes pile up; every access still counts
    tiny = build_fingerprint(row)
    assert tiny.size == 3
    assert int(tiny.counters.sum()) == 10


def test_fingerprint_duplicate_rows_double():
    rng = np.random.default_rng(2)
    row = unit_rows(rng, 1, 64)
    cfg = SamplerConfig(filter_size=5003)
    one = build_fingerprint(row, cfg)
    two = build_fingerprint(np.vstack([row, row]), cfg)
    np.testing.assert_array_equal(two.counters, 2 * one.counters)


def test_fingerprint_empty():
    with pytest.raises(EmptyInputError):
        build_fingerprint(np.zeros((0, 8), dtype=np.float32))


# -- screen ------------------------------------------------------------------


def test_screen_identical_rows_always_admitted():
    rng = np.random.default_rng(3)
    down = unit_rows(rng, 50, 128)
    openset = np.vstack([unit_rows(rng, 200, 128), down[[4, 9]]])
    cands = screen(openset, build_fingerprint(down))
    assert {200, 201} <= set(cands.indices.tolist())
    assert np.all(np.diff(cands.indices) > 0)


def test_screen_empty_filter():
    rng = np.random.default_rng(4)
    filt = CountingBloomFilter(1000, 64)
    assert len(screen(unit_rows(rng, 100, 64), filt)) == 0


def test_screen_dim_mismatch():
    rng = np.random.default_rng(5)
    filt = build_fingerprint(unit_rows(rng, 10, 64))
    with pytest.raises(DimError):
        screen(unit_rows(rng, 10, 60), filt)


def test_screen_sign_separated_clusters():
    rng = np.random.default_rng(6)
    d = 512
    proto_a = rng.choice([-1.0, 1.0], size=d) / np.sqrt(d)
    proto_b = -proto_a

    def cluster(p, n):
        return normalize(p + 1e-6 * rng.standard_normal((n, d)))

    down = cluster(proto_a, 100)
    openset = np.vstack([cluster(proto_a, 500), cluster(proto_b, 500)])
    is_a = np.arange(1000) < 500
    filt = build_fingerprint(down)
    cands = screen(openset, filt)
    admitted = np.zeros(1000, dtype=bool)
    admitted[cands.indices] = True

    sig_a, sig_b = binarize(proto_a), binarize(proto_b)
    # oracle: direct signature comparison
    assert all(binarize(row).tobytes() == sig_a.tobytes() for row in openset[is_a])
    assert all(binarize(row).tobytes() == sig_b.tobytes() for row in openset[~is_a])
    assert admitted[is_a].all()
    measured_fpr = float(filt.check(sig_b))
    assert admitted[~is_a].mean() == measured_fpr


def test_screen_threads_do_not_change_result():
    rng = np.random.default_rng(7)
    down = unit_rows(rng, 300, 64)
    openset = unit_rows(rng, 70000, 64)
    filt = build_fingerprint(down)
    one = screen(openset, filt, threads=1).indices
    for t in (2, 4, 8):
        np.testing.assert_array_equal(screen(openset, filt, threads=t).indices, one)


# -- score -------------------------------------------------------------------


def test_score_identity_and_orthogonal():
    x = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float32)
    table = score(x, all_candidates(x)).scores
    assert table[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert table[0, 1] == pytest.approx(0.0, abs=1e-6)


def test_score_against_elementwise_dot():
    rng = np.random.default_rng(8)
    x = unit_rows(rng, 3, 16)
    m = unit_rows(rng, 2, 16)
    table = score(x, all_candidates(m)).scores
    expected = oracles.dot_table(x, m)
    np.testing.assert_allclose(table, expected, atol=1e-6)
    assert np.all(np.abs(table) <= 1 + 1e-6)


def test_score_empty_candidates():
    x = np.eye(3, dtype=np.float32)
    empty = CandidateSet(np.zeros(0, dtype=np.int64), x)
    assert score(x, empty).shape == (3, 0)


def test_score_dim_mismatch():
    with pytest.raises(DimError):
        score(np.eye(3, dtype=np.float32), all_candidates(np.eye(4, dtype=np.float32)))


# -- refine ------------------------------------------------------------------


def random_table(rng, rows, cols, quantize=False):
    scores = rng.uniform(-1, 1, size=(rows, cols))
    if quantize:
        scores = np.round(scores * 8) / 8
    return scores.astype(np.float32)


@pytest.mark.parametrize("strategy", ["max", "sum", "base"])
def test_refine_budget_exceeds_pool(strategy):
    rng = np.random.default_rng(9)
    table = ScoreTable(random_table(rng, 4, 6))
    cands = CandidateSet(np.array([2, 5, 7, 8, 11, 20]), np.zeros((21, 3), dtype=np.float32))
    sel = refine(table, cands, 50, strategy)
    assert sorted(sel.indices.tolist()) == [2, 5, 7, 8, 11, 20]


def test_refine_single_row_degeneracy():
    rng = np.random.default_rng(10)
    table = ScoreTable(random_table(rng, 1, 40, quantize=True))
    cands = all_candidates(np.zeros((40, 2), dtype=np.float32))
    picks = {s: refine(table, cands, 7, s).indices.tolist() for s in ("max", "sum", "base")}
    expected = oracles.top_by(table.scores[0].tolist(), 7)
    assert picks["max"] == picks["sum"] == picks["base"] == expected


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("strategy", ["max", "sum", "base"])
def test_refine_matches_bruteforce(seed, strategy):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 20, 50, quantize=seed % 2 == 0)
    cands = all_candidates(np.zeros((50, 2), dtype=np.float32))
    sel = refine(ScoreTable(table), cands, 10, strategy)
    expected = oracles.naive_select(table.tolist(), 10, strategy)
    if strategy == "base":
        assert sel.indices.tolist() == expected
    else:
        assert sorted(sel.indices.tolist()) == sorted(expected)
        assert sel.indices.tolist() == expected


def test_refine_maps_positions_to_openset_indices():
    table = ScoreTable(np.array([[0.1, 0.9, 0.5]], dtype=np.float32))
    cands = CandidateSet(np.array([3, 10, 42]), np.zeros((50, 2), dtype=np.float32))
    sel = refine(table, cands, 2, "max")
    assert sel.indices.tolist() == [10, 42]
    np.testing.assert_allclose(sel.scores, [0.9, 0.5])


def test_refine_ties_go_to_lower_index():
    table = ScoreTable(np.full((3, 5), 0.25, dtype=np.float32))
    cands = all_candidates(np.zeros((5, 2), dtype=np.float32))
    for s in ("max", "sum", "base"):
        assert refine(table, cands, 3, s).indices.tolist() == [0, 1, 2]


def test_refine_rejects_bad_budget():
    with pytest.raises(ValueError):
        refine(ScoreTable(np.zeros((1, 1), dtype=np.float32)), all_candidates(np.zeros((1, 1))), 0)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 40),
    st.integers(1, 45),
    st.integers(0, 2**32 - 1),
    st.sampled_from(["max", "sum"]),
)
def test_refine_selected_dominate_unselected(rows, cols, budget, seed, strategy):
    rng = np.random.default_rng(seed)
    table = random_table(rng, rows, cols, quantize=True)
    sel = refine(ScoreTable(table), all_candidates(np.zeros((cols, 1))), budget, strategy)
    agg = oracles.column_max(table.tolist()) if strategy == "max" else oracles.column_sum(table.tolist())
    chosen = set(sel.indices.tolist())
    assert len(chosen) == sel.n_selected == min(budget, cols)
    rest = [j for j in range(cols) if j not in chosen]
    if rest:
        worst_in = min((agg[j], -j) for j in chosen)
        best_out = max((agg[j], -j) for j in rest)
        assert worst_in > best_out


def test_ranked_row_ties_and_depth():
    row = np.array([0.5, 0.9, 0.5, 0.9, 0.1], dtype=np.float32)
    assert ranked_row(row, 3).tolist() == [1, 3, 0]
    assert ranked_row(row, 10).tolist() == [1, 3, 0, 2, 4]
    for t in range(6):
        assert ranked_row(row, t).tolist() == ranked_row(row, 5)[:t].tolist()


# -- blocked evaluation ------------------------------------------------------


@pytest.mark.parametrize("strategy", ["max", "sum", "base"])
def test_blocked_equals_dense(monkeypatch, strategy):
    rng = np.random.default_rng(11)
    down = unit_rows(rng, 37, 24)
    pool = unit_rows(rng, 211, 24)
    idx = np.arange(211) * 3
    cands = CandidateSet(idx, np.zeros((700, 24), dtype=np.float32))
    cands.openset[idx] = pool
    dense = refine(score(down, cands), cands, 25, strategy)
    # force tiny blocks so both the row- and column-blocked paths split
    monkeypatch.setattr(sampler_mod, "_BLOCK_ELEMS", 50)
    blocked, _, _ = select_from_pool(down, pool, idx, 25, strategy)
    assert blocked.indices.tolist() == dense.indices.tolist()
    np.testing.assert_array_equal(blocked.scores, dense.scores)


def test_blocked_base_deepens_rankings(monkeypatch):
    # one downstream row and a budget larger than the initial ranking depth
    rng = np.random.default_rng(12)
    down = unit_rows(rng, 2, 8)
    pool = unit_rows(rng, 300, 8)
    dense = refine(score(down, all_candidates(pool)), all_candidates(pool), 120, "base")
    blocked, _, _ = select_from_pool(down, pool, np.arange(300), 120, "base")
    assert blocked.indices.tolist() == dense.indices.tolist()
    assert blocked.indices.tolist() == oracles.round_robin(score(down, all_candidates(pool)).scores.tolist(), 120)


# -- sample_coreset ----------------------------------------------------------


def test_sample_openset_is_downstream_full_budget():
    rng = np.random.default_rng(13)
    down = unit_rows(rng, 40, 32)
    openset = down[rng.permutation(40)]
    sel = sample_coreset(down, openset, SamplerConfig(budget_fraction=1.0))
    assert sorted(sel.indices.tolist()) == list(range(40))


def test_sample_budget_one_percent():
    rng = np.random.default_rng(14)
    down = unit_rows(rng, 20, 16)
    openset = unit_rows(rng, 10000, 16)
    # a 1-counter filter admits everything once any row is inserted
    sel = sample_coreset(down, openset, SamplerConfig(filter_size=1))
    assert sel.budget_count == 100
    assert sel.n_selected == 100
    assert sel.n_candidates == 10000
    assert set(sel.timings_ms) == {"fingerprint", "screen", "score", "refine"}


def test_sample_shortfall_reported_not_backfilled():
    rng = np.random.default_rng(15)
    down = unit_rows(rng, 5, 64)
    openset = np.vstack([unit_rows(rng, 300, 64), down[:2]])
    sel = sample_coreset(down, openset, SamplerConfig(budget_fraction=0.5))
    assert sel.n_selected == sel.n_candidates < sel.budget_count
    assert any("shortfall" in n for n in sel.notes)


def test_sample_empty_candidates():
    rng = np.random.default_rng(16)
    down = unit_rows(rng, 1, 512)
    openset = -down
    with pytest.raises(EmptyCandidateError):
        sample_coreset(down, openset, SamplerConfig(filter_size=1 << 20))


def test_sample_dim_mismatch():
    rng = np.random.default_rng(17)
    with pytest.raises(DimError):
        sample_coreset(unit_rows(rng, 3, 8), unit_rows(rng, 3, 9))


def test_sample_output_inside_candidates():
    rng = np.random.default_rng(18)
    down = unit_rows(rng, 200, 16)
    openset = unit_rows(rng, 3000, 16)
    cfg = SamplerConfig(budget_fraction=0.05)
    cands = screen(openset, build_fingerprint(down, cfg))
    for s in ("max", "sum", "base"):
        sel = sample_coreset(down, openset, SamplerConfig(budget_fraction=0.05, strategy=s))
        assert set(sel.indices.tolist()) <= set(cands.indices.tolist())
        assert sel.n_selected == min(budget_count_for(0.05, 3000), len(cands))
        assert len(set(sel.indices.tolist())) == sel.n_selected


def test_selection_json_schema():
    rng = np.random.default_rng(19)
    down = unit_rows(rng, 20, 16)
    sel = sample_coreset(down, unit_rows(rng, 500, 16), SamplerConfig(budget_fraction=0.1, filter_size=1))
    doc = json.loads(sel.to_json())
    for key in (
        "strategy",
        "budget_fraction",
        "budget_count",
        "n_downstream",
        "n_openset",
        "n_candidates",
        "n_selected",
        "timings_ms",
        "selected",
    ):
        assert key in doc
    assert set(doc["timings_ms"]) == {"fingerprint", "screen", "score", "refine"}
    assert doc["selected"][0].keys() == {"index", "score"}
    assert doc["n_selected"] == len(doc["selected"]) == 50
