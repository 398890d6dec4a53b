import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parsimix.core import (
    DataMatrix,
    DimensionMismatchError,
    FitResult,
    IngestError,
    MixtureParameters,
    ModelCodeError,
    ModelSpec,
    SingularCovarianceError,
    align_labels,
    align_parameters,
    check_responsibilities,
    map_classify,
)


def params3():
    mean = np.array([[0.0, 5.0, 10.0], [1.0, -1.0, 3.0]])
    cov = np.stack([np.eye(2) * s for s in (1.0, 2.0, 0.5)])
    return MixtureParameters(np.array([0.2, 0.3, 0.5]), mean, cov, "VII")


def test_data_matrix_validation():
    dm = DataMatrix.from_array([[1, 2], [3, 4]])
    assert dm.column_names == ("V1", "V2") and dm.n == 2 and dm.d == 2
    assert not dm.values.flags.writeable
    with pytest.raises(IngestError):
        DataMatrix.from_array([[1, np.nan]])
    with pytest.raises(DimensionMismatchError):
        DataMatrix(np.ones((2, 2)), ("a",))


def test_model_spec():
    spec = ModelSpec("vvi", 3)
    assert spec.code == "VVI" and str(spec) == "VVI,3" and spec.fitted
    assert not ModelSpec("EVV", 2).fitted
    with pytest.raises(ModelCodeError):
        ModelSpec("ABC", 2)
    with pytest.raises(ValueError):
        ModelSpec("VVI", 0)


def test_mixture_parameters_validation():
    p = params3()
    assert (p.K, p.d) == (3, 2)
    with pytest.raises(ValueError):
        MixtureParameters(np.array([0.5, 0.6]), p.mean[:, :2], p.cov[:2])
    with pytest.raises(DimensionMismatchError):
        MixtureParameters(p.pro, p.mean[:, :2], p.cov)
    bad = p.cov.copy()
    bad[1] = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularCovarianceError):
        MixtureParameters(p.pro, p.mean, bad)


def test_parameters_dict_round_trip():
    p = params3()
    q = MixtureParameters.from_dict(p.to_dict())
    assert np.array_equal(p.pro, q.pro) and np.array_equal(p.cov, q.cov) and q.code == "VII"


def test_responsibility_checks():
    check_responsibilities(np.array([[0.3, 0.7], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        check_responsibilities(np.array([[0.3, 0.6]]))
    with pytest.raises(ValueError):
        check_responsibilities(np.array([[-0.1, 1.1]]))
    assert map_classify(np.array([[0.5, 0.5], [0.2, 0.8]])).tolist() == [1, 2]


def _result(params, z):
    labels = map_classify(z)
    return FitResult(ModelSpec("VII", params.K), params, -1.0, 5, -2.0, -3.0, z, labels, 1, True)


def _brute_force(ref, cand):
    best, arg = np.inf, None
    for perm in itertools.permutations(range(ref.K)):
        cost = sum(np.linalg.norm(ref.mean[:, j] - cand.mean[:, perm[j]]) for j in range(ref.K))
        if cost < best - 1e-12:
            best, arg = cost, perm
    return np.array(arg)


@given(st.permutations(range(4)), st.integers(0, 2**32 - 1))
def test_alignment_matches_brute_force(perm, seed):
    rng = np.random.default_rng(seed)
    K, d = 4, 3
    mean = rng.normal(scale=3, size=(d, K))
    ref = MixtureParameters(np.full(K, 0.25), mean, np.stack([np.eye(d)] * K))
    noisy = MixtureParameters(
        rng.dirichlet(np.ones(K)) * 0.999 + 0.00025, mean + rng.normal(scale=0.5, size=(d, K)), ref.cov
    )
    cand = noisy.permute(list(perm))
    expected = _brute_force(ref, cand)
    aligned = align_parameters(ref, cand)
    assert np.array_equal(aligned.mean, cand.mean[:, expected])


def test_align_labels_permutes_z_and_classification():
    p = params3()
    rng = np.random.default_rng(1)
    z = rng.dirichlet(np.ones(3), size=20)
    res = _result(p, z)
    perm = [2, 0, 1]
    shuffled = res.permute(perm)
    back = align_labels(p, shuffled)
    assert np.array_equal(back.z, res.z)
    assert np.array_equal(back.classification, res.classification)
    assert np.array_equal(back.params.mean, p.mean)
    assert align_labels(p, res) is res


def test_align_dimension_mismatch():
    p = params3()
    q = MixtureParameters(np.array([1.0]), np.zeros((2, 1)), np.eye(2)[None])
    with pytest.raises(DimensionMismatchError):
        align_parameters(p, q)


def test_cluster_sizes():
    p = params3()
    z = np.eye(3)[[0, 0, 2, 1, 2, 2]]
    assert _result(p, z).cluster_sizes().tolist() == [2, 1, 3]
