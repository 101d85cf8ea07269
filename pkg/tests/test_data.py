import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiertmle.data import (Community, HierarchicalDataset, IndividualRecord, community_outcome, empirical_bounds,
                           load_dataset, scale_outcome, unscale_estimate, write_dataset)
from hiertmle.errors import (InvariantError, OutcomeOutOfBounds, ParseError, SchemaError, WeightError)

from conftest import make_dataset


def _community(ys, alpha=None, cid="c"):
    return Community(cid, (0.0,), 1.0, tuple(IndividualRecord((0.0,), y) for y in ys), alpha)


class TestCommunityOutcome:
    def test_rescale_single(self):
        assert community_outcome(_community([3.0], (1.0,)), (1, 5)).y_c == 0.5

    def test_identity_bounds(self):
        assert community_outcome(_community([0.0, 1.0], (0.5, 0.5)), (0, 1)).y_c == 0.5

    def test_three_individuals(self):
        # (0.2 + 0.4 + 0.6) / 3
        out = community_outcome(_community([2.0, 4.0, 6.0], (1 / 3, 1 / 3, 1 / 3)), (0, 10)).y_c
        assert out == pytest.approx(0.4, abs=1e-12)

    def test_out_of_bounds(self):
        with pytest.raises(OutcomeOutOfBounds):
            community_outcome(_community([6.0]), (0, 5))

    def test_bad_weights(self):
        with pytest.raises(WeightError):
            _community([0.1, 0.2], (0.5, 0.6))
        with pytest.raises(WeightError):
            _community([0.1, 0.2], (1.5, -0.5))

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=8), st.randoms(use_true_random=False))
    def test_order_invariant(self, ys, rnd):
        perm = list(ys)
        rnd.shuffle(perm)
        a = community_outcome(_community(ys), (0, 10)).y_c
        b = community_outcome(_community(perm), (0, 10)).y_c
        assert a == pytest.approx(b, abs=1e-12)


class TestUnscale:
    def test_identity(self):
        assert unscale_estimate(0.5, 0.1, (0, 1)) == (0.5, 0.1)

    def test_rescaled(self):
        psi, se = unscale_estimate(0.5, 0.1, (1, 5))
        assert psi == pytest.approx(3.0) and se == pytest.approx(0.4)

    def test_endpoint(self):
        assert unscale_estimate(0.0, 0.0, (-2, 2)) == (-2.0, 0.0)

    @given(st.floats(-100, 100), st.floats(0.01, 100), st.floats(0, 1))
    def test_scale_roundtrip(self, lo, width, u):
        y = lo + width * u
        s = float(scale_outcome(y, (lo, lo + width)))
        back, _ = unscale_estimate(s, 0.0, (lo, lo + width))
        assert back == pytest.approx(y, abs=1e-12 * (1 + abs(y)))


def test_empirical_bounds_guard():
    assert empirical_bounds([2.0, 2.0]) == (2.0, 3.0)
    assert empirical_bounds([1.0, 4.0]) == (1.0, 4.0)


class TestDataset:
    def test_needs_two_communities(self):
        with pytest.raises(InvariantError):
            HierarchicalDataset.from_communities([_community([0.1])], (0, 1))

    def test_empty_community(self):
        with pytest.raises(InvariantError):
            Community("x", (0.0,), 0.0, ())

    def test_community_outcomes_match(self):
        ds = make_dataset([0, 1], [[1.0, 3.0], [5.0]], bounds=(1, 5))
        np.testing.assert_allclose(ds.y_community, [0.25, 1.0])

    def test_fingerprint_changes(self):
        ds = make_dataset([0, 1], [[0.1, 0.3], [0.5]])
        ds2 = make_dataset([0, 1], [[0.1, 0.3], [0.6]])
        assert ds.fingerprint() != ds2.fingerprint()

    def test_read_only(self):
        ds = make_dataset([0, 1], [[0.1, 0.3], [0.5]])
        with pytest.raises(ValueError):
            ds.y[0] = 1.0


CSV_TWO = """community_id,a,e_1,w_1,y
c1,1,0.5,0.1,0.2
c1,1,0.5,0.3,0.4
c2,0,1.5,0.2,0.9
"""


class TestLoad:
    def test_two_communities(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(CSV_TWO)
        ds = load_dataset(p)
        assert ds.J == 2
        assert list(ds.sizes) == [2, 1]
        np.testing.assert_allclose(ds.alpha, [0.5, 0.5, 1.0])

    def test_non_contiguous_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("community_id,a,e_1,w_1,y\nc1,1,0,0,0.2\nc2,0,1,0,0.9\nc1,1,0,1,0.4\n")
        ds = load_dataset(p, {"outcome_bounds": [0, 1]})
        assert list(ds.sizes) == [2, 1]
        np.testing.assert_allclose(ds.y, [0.2, 0.4, 0.9])

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("community_id,a,w_1\nc1,1,0.1\n")
        with pytest.raises(SchemaError):
            load_dataset(p)

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("community_id,a,e_1,w_1,y\nc1,1,0.5,abc,0.2\n")
        with pytest.raises(ParseError, match=":2:"):
            load_dataset(p)

    def test_zero_size_community(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("community_id,a,e_1,w_1,y,n\nc1,1,0.5,0.1,0.2,0\nc2,0,1,0,0.9,1\n")
        with pytest.raises(InvariantError):
            load_dataset(p)

    def test_inconsistent_exposure(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("community_id,a,e_1,w_1,y\nc1,1,0.5,0.1,0.2\nc1,0,0.5,0.1,0.2\nc2,0,1,0,0.9\n")
        with pytest.raises(InvariantError):
            load_dataset(p)

    def test_roundtrip(self, tmp_path, binary_ds):
        p = tmp_path / "d.csv"
        write_dataset(binary_ds, p)
        back = load_dataset(p, {"outcome_bounds": list(binary_ds.outcome_bounds)})
        assert back.fingerprint() == binary_ds.fingerprint()

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=2, max_size=6))
    def test_alpha_sums(self, sizes):
        ds = make_dataset([0] * len(sizes), [[0.5] * n for n in sizes])
        sums = np.bincount(ds.group, weights=ds.alpha)
        assert np.all(np.abs(sums - 1) <= 1e-12)
