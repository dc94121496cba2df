import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairmatch import stats
from oracles import best_split_brute, cliffs_brute, e_delta_brute, welch_quadrature

# p for [1..5] vs [2..6]: t = -1, df = 8; from the mpmath quadrature oracle at 40 digits
P_ONE_TO_FIVE = 0.34659350708733424783


def test_welch_examples():
    a = [0.2, 0.5, 0.9, 0.4]
    t, _, p = stats.welch_ttest(a, a)
    assert t == 0.0 and p == 1.0
    assert stats.welch_ttest([0, 0], [1, 1])[2] == 0.0
    assert stats.welch_ttest([3, 3], [3, 3])[2] == 1.0
    t, df, p = stats.welch_ttest([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert t == pytest.approx(-1.0) and df == pytest.approx(8.0)
    assert p == pytest.approx(P_ONE_TO_FIVE, abs=1e-12)
    with pytest.raises(ValueError):
        stats.welch_ttest([1], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_welch_against_quadrature(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, rng.uniform(0.1, 3), rng.integers(2, 30))
    b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 3), rng.integers(2, 30))
    t, df, p = stats.welch_ttest(a, b)
    t_o, df_o, p_o = welch_quadrature(a, b)
    assert t == pytest.approx(t_o, rel=1e-9)
    assert df == pytest.approx(df_o, rel=1e-9)
    assert abs(p - p_o) <= 1e-8
    t2, _, p2 = stats.welch_ttest(b, a)
    assert t2 == -t and p2 == p


def test_cliffs_examples():
    assert stats.cliffs_delta([1, 2, 3], [3, 2, 1]).delta == 0.0
    assert stats.cliffs_delta([5, 6], [1, 2, 3]).delta == 1.0
    # pairs: (1,2) <, (1,3) <, (2,2) =, (2,3) <  ->  (0 - 3) / 4
    e = stats.cliffs_delta([1, 2], [2, 3])
    assert e.delta == cliffs_brute([1, 2], [2, 3]) == -0.75
    assert e.magnitude == "non-negligible"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=25), st.lists(st.integers(0, 6), min_size=1, max_size=25))
def test_cliffs_matches_brute_force(a, b):
    d = stats.cliffs_delta(a, b).delta
    assert d == pytest.approx(cliffs_brute(a, b), abs=1e-15)
    assert stats.cliffs_delta(b, a).delta == pytest.approx(-d, abs=1e-15)


def test_gate_threshold():
    assert stats.EffectSize(0.147).non_negligible
    assert not stats.EffectSize(0.1469).non_negligible


def test_scott_knott_examples():
    same = {"a": [1, 2, 3], "b": [1, 2, 3], "c": [1, 2, 3]}
    assert set(stats.scott_knott(same).ranks.values()) == {1}
    t = stats.scott_knott({"lo": [1, 1, 1], "hi": [100, 100, 100]})
    assert t.ranks == {"hi": 1, "lo": 2}
    t = stats.scott_knott({"lo": [1, 1, 1], "hi": [100, 100, 100]}, smaller_is_better=True)
    assert t.ranks == {"lo": 1, "hi": 2}
    assert stats.scott_knott({"only": [4, 5]}).ranks == {"only": 1}
    with pytest.raises(ValueError):
        stats.scott_knott({"a": []})


def test_expected_delta_matches_formula():
    groups = [np.array([5.0, 6.0]), np.array([3.0]), np.array([1.0, 0.0, 2.0])]
    for s in (1, 2):
        assert stats.expected_delta(groups, s) == pytest.approx(e_delta_brute([list(g) for g in groups], s))


def _check_tree(groups_in_order, names):
    """Replay the recursion with the oracle and compare leaf boundaries."""
    leaves = []

    def rec(block):
        if len(block) > 1:
            pooled = [groups_in_order[k] for k in block]
            cut, _ = best_split_brute(pooled)
            left = [x for g in pooled[:cut] for x in g]
            right = [x for g in pooled[cut:] for x in g]
            if abs(cliffs_brute(left, right)) >= 0.147:
                rec(block[:cut])
                rec(block[cut:])
                return
        leaves.append(block)

    rec(names)
    return leaves


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_scott_knott_splits_match_exhaustive_scan(seed, smaller):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 7)
    groups = {f"t{i}": rng.normal(rng.integers(0, 4), 1.0, rng.integers(2, 8)).round(1) for i in range(k)}
    table = stats.scott_knott(groups, smaller_is_better=smaller)
    order = list(table.order)
    leaves = _check_tree({n: list(groups[n]) for n in order}, order)
    expected = {n: r for r, leaf in enumerate(leaves, 1) for n in leaf}
    assert table.ranks == expected
    assert sorted(set(table.ranks.values())) == list(range(1, max(table.ranks.values()) + 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabeling_permutes_ranks(seed):
    rng = np.random.default_rng(seed)
    groups = {f"m{i}": rng.normal(i % 3, 1.0, 6) for i in range(5)}
    t1 = stats.scott_knott(groups)
    # relabel without changing the order of ties: medians are distinct almost surely
    mapping = {k: f"x{9 - i}" for i, k in enumerate(groups)}
    t2 = stats.scott_knott({mapping[k]: v for k, v in groups.items()})
    assert {mapping[k]: r for k, r in t1.ranks.items()} == t2.ranks


def test_rank_table_csv():
    t = stats.scott_knott({"a": [1, 1], "b": [9, 9]})
    assert t.to_csv().splitlines() == ["treatment,median,rank", "b,9.0,1", "a,1.0,2"]
