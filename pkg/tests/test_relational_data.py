import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from netattr.errors import ValidationError
from netattr.relational_data import (
    AttributeMatrix,
    DyadCovariate,
    RelationalMatrix,
    align_attributes,
    binarize,
    center_attributes,
    load_attributes,
    load_covariate,
    load_network,
    save_attributes,
    save_network,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_dense_three_nodes_has_six_observed(tmp_path):
    f = write(tmp_path / "y.csv", ",a,b,c\na,,1,2\nb,3,,4\nc,5,6,\n")
    Y = load_network(f)
    assert Y.n == 3
    assert Y.observed.sum() == 6
    assert not Y.observed.diagonal().any()
    assert Y.values[2, 1] == 6.0


def test_dense_missing_cells_are_unobserved(tmp_path):
    f = write(tmp_path / "y.csv", ",a,b,c\na,,,2\nb,3,,4\nc,5,6,\n")
    Y = load_network(f)
    assert not Y.observed[0, 1]
    assert math.isnan(Y.values[0, 1])


def test_edge_list_ranks(tmp_path):
    f = write(tmp_path / "e.csv", "src,dst,value\n1,2,5\n1,3,3\n")
    Y = load_network(f, format="edge-list-csv", kind="rank", max_nominations=5)
    assert Y.labels == ("1", "2", "3")
    assert np.isnan(Y.values[0, 0])
    np.testing.assert_array_equal(Y.values[0, 1:], [5, 3])
    off = ~np.eye(3, dtype=bool)
    off[0] = False
    assert np.all(Y.values[off] == 0)
    assert Y.observed.sum() == 6


def test_edge_list_continuous_absent_pairs_missing(tmp_path):
    f = write(tmp_path / "e.csv", "src,dst,value\n1,2,0.5\n2,3,1.5\n")
    Y = load_network(f, format="edge-list-csv")
    assert Y.observed.sum() == 2


def test_duplicate_ranks_rejected(tmp_path):
    f = write(tmp_path / "e.csv", "src,dst,value\n1,2,5\n1,3,5\n")
    with pytest.raises(ValidationError, match="distinct"):
        load_network(f, format="edge-list-csv", kind="rank", max_nominations=5)


def test_rank_above_cap_rejected():
    R = np.array([[np.nan, 6, 0], [0, np.nan, 0], [0, 0, np.nan]])
    with pytest.raises(ValidationError):
        RelationalMatrix(R, kind="rank", max_nominations=5)


def test_rank_needs_cap():
    with pytest.raises(ValidationError):
        RelationalMatrix(np.zeros((3, 3)), kind="rank")


def test_all_zero_rank_rows_accepted():
    Y = RelationalMatrix(np.zeros((4, 4)), kind="rank", max_nominations=2)
    assert Y.observed.sum() == 12


@pytest.mark.parametrize("text", [",a,b\na,,1\n", ",a,b,c\na,,1,2\nb,3,,4\nc,5,x,\n"])
def test_malformed_dense_rejected(tmp_path, text):
    with pytest.raises(ValidationError):
        load_network(write(tmp_path / "y.csv", text))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_network(tmp_path / "nope.csv")


def test_binary_values_checked():
    Y = np.array([[np.nan, 1, 2], [0, np.nan, 1], [1, 0, np.nan]])
    with pytest.raises(ValidationError):
        RelationalMatrix(Y, kind="binary")


def test_values_read_only():
    Y = RelationalMatrix(np.ones((3, 3)))
    with pytest.raises(ValueError):
        Y.values[0, 1] = 3.0


def test_round_trip_dense_and_edge_list(tmp_path, rng):
    vals = rng.normal(size=(5, 5))
    vals[1, 3] = np.nan
    Y = RelationalMatrix(vals)
    save_network(Y, tmp_path / "y.csv")
    Y2 = load_network(tmp_path / "y.csv")
    np.testing.assert_array_equal(Y.values, Y2.values)
    np.testing.assert_array_equal(Y.observed, Y2.observed)

    R = np.zeros((4, 4))
    R[0, 1], R[0, 2], R[3, 0] = 2, 1, 2
    Yr = RelationalMatrix(R, kind="rank", max_nominations=2)
    save_network(Yr, tmp_path / "r.csv", format="edge-list-csv")
    Yr2 = load_network(tmp_path / "r.csv", format="edge-list-csv", kind="rank", max_nominations=2,
                       nodes=Yr.labels)
    np.testing.assert_array_equal(Yr.values, Yr2.values)
    np.testing.assert_array_equal(Yr.observed, Yr2.observed)


def test_attribute_round_trip_and_alignment(tmp_path):
    X = AttributeMatrix(np.array([[1.0, np.nan], [2.0, 3.0], [4.0, 5.0]]), names=("x", "y"), labels=("a", "b", "c"))
    save_attributes(X, tmp_path / "x.csv")
    X2 = load_attributes(tmp_path / "x.csv")
    np.testing.assert_array_equal(X.values, X2.values)
    np.testing.assert_array_equal(X.observed, X2.observed)
    Z = align_attributes(X2, ("c", "a", "b"))
    np.testing.assert_array_equal(Z.values[0], [4.0, 5.0])
    with pytest.raises(ValidationError):
        align_attributes(X2, ("a", "b", "zz"))


def test_covariate_loading(tmp_path):
    f = write(tmp_path / "grade.csv", ",a,b,c\na,,1,0\nb,1,,0\nc,0,0,\n")
    W = load_covariate(f)
    assert W.label == "grade"
    assert W.values[0, 0] == 0.0 and W.values[0, 1] == 1.0


def test_covariate_must_be_finite_and_square():
    with pytest.raises(ValidationError):
        DyadCovariate("w", np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(ValidationError):
        DyadCovariate("w", np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------


def test_center_simple_column():
    X = center_attributes(AttributeMatrix(np.array([[1.0], [2.0], [3.0]])))
    np.testing.assert_allclose(X.values[:, 0], [-1, 0, 1])
    assert X.centered


def test_center_ignores_missing():
    X = center_attributes(AttributeMatrix(np.array([[1.0], [np.nan], [3.0]])))
    np.testing.assert_allclose(X.values[[0, 2], 0], [-1, 1])
    assert not X.observed[1, 0] and np.isnan(X.values[1, 0])


def test_center_rejects_empty_column():
    with pytest.raises(ValidationError):
        center_attributes(AttributeMatrix(np.array([[1.0, np.nan], [2.0, np.nan]])))


def test_centered_flag_checked():
    with pytest.raises(ValidationError):
        AttributeMatrix(np.array([[1.0], [2.0]]), centered=True)


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)),
                  elements=st.one_of(st.floats(-1e3, 1e3), st.just(np.nan))))
def test_center_idempotent_and_mask_preserving(vals):
    vals[0] = np.nan_to_num(vals[0])  # at least one observed entry per column
    X = AttributeMatrix(vals)
    once = center_attributes(X)
    twice = center_attributes(once)
    np.testing.assert_array_equal(once.observed, X.observed)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12 * max(1.0, np.nanmax(np.abs(vals))))
    means = np.nanmean(once.values, axis=0)
    np.testing.assert_allclose(means, 0, atol=1e-10 * max(1.0, np.nanmax(np.abs(vals))))


# ---------------------------------------------------------------------------
# binarization
# ---------------------------------------------------------------------------


def test_binarize_top_half():
    Y = np.array([[np.nan, 1, 2], [3, np.nan, 4], [5, 6, np.nan]])
    B = binarize(RelationalMatrix(Y), 0.5)
    assert B.kind == "binary"
    expected = np.array([[np.nan, 0, 0], [0, np.nan, 1], [1, 1, np.nan]])
    np.testing.assert_array_equal(B.values, expected)


def test_binarize_tiny_density_gives_empty():
    Y = RelationalMatrix(np.arange(9.0).reshape(3, 3))
    B = binarize(Y, 0.1)
    assert np.nansum(B.values) == 0


def test_binarize_ties_in_index_order():
    B = binarize(RelationalMatrix(np.ones((3, 3))), 0.5)
    expected = np.array([[np.nan, 1, 1], [1, np.nan, 0], [0, 0, np.nan]])
    np.testing.assert_array_equal(B.values, expected)


@pytest.mark.parametrize("d", [0.0, 1.0, -0.1, 1.5])
def test_binarize_density_range(d):
    with pytest.raises(ValidationError):
        binarize(RelationalMatrix(np.ones((3, 3))), d)


def test_binarize_needs_full_network():
    Y = np.ones((3, 3))
    Y[0, 1] = np.nan
    with pytest.raises(ValidationError):
        binarize(RelationalMatrix(Y), 0.5)


@given(st.integers(3, 15), st.floats(0.01, 0.99), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_binarize_density_exact(n, d, seed, discrete):
    r = np.random.default_rng(seed)
    vals = r.integers(0, 3, (n, n)).astype(float) if discrete else r.normal(size=(n, n))
    B = binarize(RelationalMatrix(vals), d)
    m = n * (n - 1)
    assert np.nansum(B.values) == math.floor(d * m + 1e-9)
    ones = B.values == 1
    zeros = B.values == 0
    if ones.any() and zeros.any():
        # every selected relation is at least as large as every unselected one
        assert vals[ones].min() >= vals[zeros].max()
