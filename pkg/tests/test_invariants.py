"""Plumbing graphs, exact signatures and s-invariant arithmetic."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmoduli.invariants import (BP_TABLE, InvariantError, PlumbingGraph, block_sum,
                                  bp_order, bp_order_formula, determinant, e8_graph,
                                  intersection_matrix, load_plumbing, parse_plumbing,
                                  separate_components, s_invariant, sigma_family, signature)


def test_e8_form():
    M = intersection_matrix(e8_graph())
    assert signature(M) == 8
    assert determinant(M) == 1
    assert signature(intersection_matrix(e8_graph(), edge_sign=-1)) == 8
    assert np.all(np.linalg.eigvalsh(np.array(M, float)) > 0)


def test_e8_file_matches_builtin(configs_dir):
    g = load_plumbing(configs_dir / "e8.plumb")
    assert g.k == 2 and len(g.nodes) == 8
    assert signature(intersection_matrix(g)) == 8
    assert determinant(intersection_matrix(g)) == 1
    assert g.dfs_order(0)[0] == 0 and sorted(g.dfs_order(0)) == list(range(8))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda n: st.lists(st.integers(-4, 4), min_size=n * n, max_size=n * n)))
def test_signature_agrees_with_eigenvalues(entries):
    n = int(round(len(entries) ** 0.5))
    A = np.array(entries, dtype=int).reshape(n, n)
    S = (A + A.T).tolist()
    if determinant(S) == 0:
        with pytest.raises(InvariantError, match="singular"):
            signature(S)
        return
    ev = np.linalg.eigvalsh(np.array(S, dtype=float))
    assert signature(S) == int(np.sum(ev > 0) - np.sum(ev < 0))


def test_signature_handles_zero_pivots():
    # the hyperbolic plane has no non-zero diagonal entry
    assert signature([[0, 1], [1, 0]]) == 0
    assert signature(block_sum([[0, 1], [1, 0]], [[2]], [[-3]])) == 0
    assert signature(block_sum(intersection_matrix(e8_graph()),
                               intersection_matrix(e8_graph()))) == 16
    with pytest.raises(InvariantError, match="singular"):
        signature([[0, 0], [0, 0]])


def test_signature_rejects_asymmetric():
    with pytest.raises(InvariantError):
        signature([[1, 2], [0, 1]])


def test_determinant_exact():
    assert determinant([[2, 1], [1, 2]]) == 3
    assert determinant([[0, 1], [1, 0]]) == -1
    assert isinstance(determinant([[Fraction(1, 3)]]), Fraction)


@pytest.mark.parametrize("k", sorted(BP_TABLE))
def test_bp_table_matches_bernoulli_formula(k):
    assert bp_order_formula(k) == BP_TABLE[k]


def test_bp_order_override_and_missing():
    assert bp_order(2) == 28
    assert bp_order(7, override=5) == 5
    with pytest.raises(InvariantError):
        bp_order(40)


def test_s_invariant_values():
    assert s_invariant(8, 2) == Fraction(1, 28)
    assert s_invariant(8, 3) == Fraction(1, 496)
    with pytest.raises(InvariantError):
        s_invariant(8, 2, ind_Dplus_zero=False)
    with pytest.raises(InvariantError):
        s_invariant(8, 2, pontrjagin_vanish=False)


@settings(max_examples=50, deadline=None)
@given(p=st.integers(0, 50), q=st.integers(1, 28))
def test_sigma_family(p, q):
    assert sigma_family(p, q, 28) == 8 * (28 * p + q)


def test_sigma_family_bounds():
    with pytest.raises(InvariantError):
        sigma_family(-1, 1, 28)
    with pytest.raises(InvariantError):
        sigma_family(0, 29, 28)


def test_separation_six_values():
    rep = separate_components(2, 1, 28, range(6))
    values = [abs(r.s_value) for r in rep.reports]
    assert len(set(values)) == 6
    assert rep.verdict == ">= 6 components"
    assert values[2] == Fraction(57, 28)
    assert rep.to_dict()["s_values"][0]["s"] == "1/28"


def test_separation_rejects_repeated_p():
    with pytest.raises(InvariantError):
        separate_components(2, 1, 28, [0, 0])


def test_parse_errors():
    with pytest.raises(InvariantError, match="missing"):
        parse_plumbing("node a euler 2\n")
    with pytest.raises(InvariantError, match="unknown node"):
        parse_plumbing("k 2\nnode a euler 2\nedge a b\n")
    with pytest.raises(InvariantError, match="tree"):
        parse_plumbing("k 2\nnode a euler 2\nnode b euler 2\n")
    with pytest.raises(InvariantError, match="cannot parse"):
        parse_plumbing("k 2\nvertex a\n")
    with pytest.raises(InvariantError, match="duplicate"):
        parse_plumbing("k 2\nnode a euler 2\nnode a euler 2\n")


def test_graph_validation():
    with pytest.raises(InvariantError):
        PlumbingGraph(1, (2,), ())
    with pytest.raises(InvariantError):
        PlumbingGraph(2, (2, 2, 2), ((0, 1), (1, 0)))
    g = PlumbingGraph(2, (2, 2, 2), ((0, 1), (1, 2)))
    assert g.neighbours(1) == [0, 2]
    assert g.to_dict()["edges"] == [[0, 1], [1, 2]]
