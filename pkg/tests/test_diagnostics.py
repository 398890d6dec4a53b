import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parsimix.diagnostics import (
    avepp,
    avepp_flags,
    diagnose,
    entropy_contributions,
    entropy_total,
    histogram,
)

rows = st.integers(2, 5).flatmap(
    lambda K: st.lists(st.lists(st.floats(0.0, 1.0), min_size=K, max_size=K), min_size=2, max_size=40)
)


def _z(raw):
    z = np.array(raw) + 1e-9
    return z / z.sum(axis=1, keepdims=True)


def loop_entropy(z):
    n, K = z.shape
    total = 0.0
    for i in range(n):
        for k in range(K):
            if z[i, k] > 0:
                total += z[i, k] * math.log(z[i, k])
    return 1 + total / (n * math.log(K))


@given(rows)
def test_entropy_invariants(raw):
    z = _z(raw)
    n, K = z.shape
    e = entropy_total(z)
    assert -1e-12 <= e <= 1 + 1e-12
    assert math.isclose(e, loop_entropy(z), rel_tol=1e-10, abs_tol=1e-12)
    case, _ = entropy_contributions(z)
    assert math.isclose(case.mean(), e, rel_tol=1e-10, abs_tol=1e-12)
    # column relabelling leaves the entropy unchanged
    assert math.isclose(entropy_total(z[:, ::-1]), e, rel_tol=1e-12, abs_tol=1e-14)


def test_entropy_extremes():
    assert entropy_total(np.eye(3)[[0, 1, 2, 1]]) == 1.0
    assert entropy_total(np.full((5, 4), 0.25)) == pytest.approx(0.0, abs=1e-15)
    assert entropy_total(np.ones((4, 1))) == 1.0
    case, summary = entropy_contributions(np.ones((4, 1)))
    assert np.all(case == 1.0) and summary[0].count == 4


def test_avepp_by_loop():
    rng = np.random.default_rng(0)
    z = rng.dirichlet(np.ones(3) * 0.7, size=60)
    labels = np.argmax(z, axis=1) + 1
    table = avepp(z)
    for row in table:
        members = z[labels == row.label, row.label - 1]
        assert row.count == members.size
        assert row.mean == pytest.approx(members.mean())
        assert row.min == members.min() and row.max == members.max()
        if members.size > 1:
            assert row.sd == pytest.approx(members.std(ddof=1))
    assert avepp_flags(table, cutoff=1.01) == [r.label for r in table]


def test_histogram_bins():
    h = histogram([0.0, 0.5, 1.0, 1.0])
    assert len(h["edges"]) == 22 and len(h["counts"]) == 21
    assert sum(h["counts"]) == 4 and h["edges"][-1] == pytest.approx(1.05)


def test_diagnose_notes_and_report():
    z = np.array([[0.55, 0.45], [0.5, 0.5], [0.4, 0.6], [0.45, 0.55]])
    rep = diagnose(z)
    assert rep.entropy_total < 0.6
    assert any("below 0.6" in n for n in rep.notes)
    assert rep.avepp_flags == [1, 2]
    d = rep.to_dict()
    assert set(d["histograms"]) == {"entropy", "map_probability"}
    assert d["labels"] == [1, 1, 2, 2]
    assert "case_entropy" not in rep.to_dict(include_cases=False)
    crisp = diagnose(np.eye(2)[[0, 1, 1]])
    assert crisp.notes == [] and crisp.avepp_flags == []


def test_diagnose_rejects_bad_labels():
    with pytest.raises(ValueError):
        diagnose(np.eye(2), labels=[1, 3])
    with pytest.raises(ValueError):
        diagnose(np.array([[0.2, 0.2]]))
