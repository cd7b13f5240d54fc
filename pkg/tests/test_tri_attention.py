import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triattn.bi_attention import BiParams, BiVariant, bi_attend
from triattn.tensor_core import CapacityError, ShapeError, identity_tensor, mode3_matricize
from triattn.tri_attention import (
    DEFAULT_INTEGRATION,
    TriParams,
    TriVariant,
    ValueIntegration,
    contextual_value,
    init_tri_params,
    tri_attend,
    tri_attend_trace,
    tri_normalize,
    tri_score,
    tri_score_batched,
)

from oracles import fiber_loop, tri_attend_loop, tri_score_loop

VARIANTS = list(TriVariant)
INTEGRATIONS = list(ValueIntegration)
COMBOS = [(v, i) for v in VARIANTS for i in INTEGRATIONS]


def _random(variant, integration, seed, D=4, I=3, J=2, N=None):
    rng = np.random.default_rng(seed)
    params = init_tri_params(variant, integration, D, rng, zero_p=False)
    q = rng.normal(size=D) if N is None else rng.normal(size=(D, N))
    return q, rng.normal(size=(D, I)), rng.normal(size=(D, I)), rng.normal(size=(D, J)), params


def test_tdp_ones():
    ones = np.ones((3, 2))
    S = tri_score(TriVariant.TDP, np.ones(3), ones, ones, TriParams())
    assert S.shape == (2, 2) and np.all(S == 3.0)


def test_tsdp_ones():
    ones = np.ones((3, 2))
    S = tri_score(TriVariant.TSDP, np.ones(3), ones, ones, TriParams())
    np.testing.assert_allclose(S, np.full((2, 2), math.sqrt(3)), atol=1e-15)


def test_trili_full_identity_is_tdp():
    for seed in range(10):
        q, K, _, C, _ = _random(TriVariant.TDP, ValueIntegration.MULTIPLICATIVE, seed, D=5)
        full = tri_score(TriVariant.TRILI_FULL, q, K, C, TriParams(Wt=identity_tensor(5)))
        assert np.max(np.abs(full - tri_score(TriVariant.TDP, q, K, C, TriParams()))) < 1e-12


def test_trili_econ_identity_is_tdp_batched():
    for seed in range(10):
        Q, K, _, C, _ = _random(TriVariant.TDP, ValueIntegration.MULTIPLICATIVE, seed, D=5, N=3)
        eye = np.eye(5)
        econ = tri_score_batched(Q, K, C, TriParams(W=eye, U=eye, H=eye), TriVariant.TRILI_ECON)
        assert np.max(np.abs(econ - tri_score_batched(Q, K, C, TriParams(), TriVariant.TDP))) < 1e-12


@pytest.mark.parametrize("variant", VARIANTS)
def test_score_matches_loop_oracle(variant):
    for seed in range(3):
        q, K, _, C, params = _random(variant, ValueIntegration.MULTIPLICATIVE, seed)
        np.testing.assert_allclose(tri_score(variant, q, K, C, params),
                                   tri_score_loop(variant.value, q, K, C, params), atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_batched_slices_match_single(variant):
    Q, K, _, C, params = _random(variant, ValueIntegration.MULTIPLICATIVE, 5, D=5, I=4, J=2, N=3)
    grids = tri_score_batched(Q, K, C, params, variant)
    assert grids.shape == (3, 4, 2)
    for n in range(3):
        np.testing.assert_allclose(grids[n], tri_score(variant, Q[:, n], K, C, params), atol=1e-12)
    one = tri_score_batched(Q[:, :1], K, C, params, variant)
    np.testing.assert_allclose(one[0], grids[0], atol=1e-12)


def test_trili_full_capacity():
    rng = np.random.default_rng(0)
    with pytest.raises(CapacityError):
        init_tri_params(TriVariant.TRILI_FULL, ValueIntegration.MULTIPLICATIVE, 33, rng)
    with pytest.raises(CapacityError):
        tri_score(TriVariant.TRILI_FULL, np.ones(33), np.ones((33, 1)), np.ones((33, 1)),
                  TriParams(Wt=np.zeros((1, 1, 1))))


def test_score_shape_errors():
    q, K, _, C, params = _random(TriVariant.TDP, ValueIntegration.MULTIPLICATIVE, 0)
    with pytest.raises(ShapeError):
        tri_score(TriVariant.TDP, q, K, C[:3], params)
    with pytest.raises(ShapeError):
        tri_score(TriVariant.TADD, q, K, C, TriParams())


def test_normalize_examples():
    np.testing.assert_allclose(tri_normalize(np.zeros((2, 3))), np.full((2, 3), 1 / 6), atol=1e-15)
    g = np.zeros((2, 2))
    g[1, 0] = 1000.0
    w = tri_normalize(g)
    assert abs(w[1, 0] - 1.0) < 1e-15
    with pytest.raises(ValueError):
        tri_normalize(np.zeros((0, 2)))


def test_normalize_is_joint_not_per_row():
    g = np.array([[0.0, 0.0], [math.log(3.0), math.log(3.0)]])
    np.testing.assert_allclose(tri_normalize(g), [[1 / 8, 1 / 8], [3 / 8, 3 / 8]], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-500, 500))
def test_normalize_shift_invariance(seed, shift):
    g = np.random.default_rng(seed).normal(size=(3, 4)) * 5
    assert np.max(np.abs(tri_normalize(g) - tri_normalize(g + shift))) < 1e-12


def test_contextual_value_examples():
    rng = np.random.default_rng(2)
    V = rng.normal(size=(3, 2))
    mul = contextual_value(ValueIntegration.MULTIPLICATIVE, V, np.ones((3, 4)), TriParams())
    add = contextual_value(ValueIntegration.ADDITIVE, V, np.zeros((3, 4)), TriParams())
    for j in range(4):
        np.testing.assert_array_equal(mul[:, j, :], V.T)
        np.testing.assert_array_equal(add[:, j, :], V.T)
    C = rng.normal(size=(3, 4))
    eye = TriParams(U2=np.eye(3), H2=np.eye(3))
    np.testing.assert_allclose(contextual_value(ValueIntegration.BILINEAR, V, C, eye),
                               contextual_value(ValueIntegration.MULTIPLICATIVE, V, C, TriParams()), atol=1e-12)


@pytest.mark.parametrize("integration", INTEGRATIONS)
def test_contextual_value_matches_loop(integration):
    _, _, V, C, params = _random(TriVariant.TDP, integration, 9)
    Vc = contextual_value(integration, V, C, params)
    for i in range(V.shape[1]):
        for j in range(C.shape[1]):
            np.testing.assert_allclose(Vc[i, j], fiber_loop(integration.value, V[:, i], C[:, j], params),
                                       atol=1e-12)


@pytest.mark.parametrize("variant,integration", COMBOS)
def test_attend_matches_loop_and_matricized_form(variant, integration):
    q, K, V, C, params = _random(variant, integration, 11)
    out = tri_attend(q, K, V, C, variant, integration, params)
    np.testing.assert_allclose(out, tri_attend_loop(variant.value, integration.value, q, K, V, C, params),
                               atol=1e-12)
    A = tri_normalize(tri_score(variant, q, K, C, params))
    Vc = contextual_value(integration, V, C, params)
    np.testing.assert_allclose(out, mode3_matricize(Vc) @ A.reshape(-1), atol=1e-12)


@pytest.mark.parametrize("integration", INTEGRATIONS)
def test_single_cell_returns_fiber(integration):
    q, K, V, C, params = _random(TriVariant.TADD, integration, 4, I=1, J=1)
    out = tri_attend(q, K, V, C, TriVariant.TADD, integration, params)
    np.testing.assert_allclose(out, contextual_value(integration, V, C, params)[0, 0], atol=1e-15)


def test_uniform_grid_gives_mean_fiber():
    q, K, V, C, params = _random(TriVariant.TADD, ValueIntegration.ADDITIVE, 4)
    params.p = np.zeros_like(params.p)
    out = tri_attend(q, K, V, C, TriVariant.TADD, ValueIntegration.ADDITIVE, params)
    Vc = contextual_value(ValueIntegration.ADDITIVE, V, C, params)
    np.testing.assert_allclose(out, Vc.reshape(-1, 4).mean(axis=0), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 6), I=st.integers(1, 5))
def test_degradation_to_bi_attention(seed, D, I):
    rng = np.random.default_rng(seed)
    q, K, V = rng.normal(size=D), rng.normal(size=(D, I)), rng.normal(size=(D, I))
    tri = tri_attend(q, K, V, np.ones((D, 1)), TriVariant.TDP, ValueIntegration.MULTIPLICATIVE, TriParams())
    bi = bi_attend(q, K, V, BiVariant.DP, BiParams())
    assert np.max(np.abs(tri - bi)) < 1e-12


@pytest.mark.parametrize("variant,integration", COMBOS)
@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_simplex_convexity_and_permutations(variant, integration, seed):
    q, K, V, C, params = _random(variant, integration, seed, I=3, J=4)
    tr = tri_attend_trace(q, K, V, C, variant, integration, params)
    A = tr["weights"]
    assert np.all(A >= 0) and abs(A.sum() - 1.0) < 1e-12
    fibers = tr["values"].reshape(-1, q.shape[0])
    out = tr["embedding"]
    assert np.all(out >= fibers.min(axis=0) - 1e-12) and np.all(out <= fibers.max(axis=0) + 1e-12)

    rng = np.random.default_rng(seed)
    pi, pj = rng.permutation(3), rng.permutation(4)
    A2 = tri_normalize(tri_score(variant, q, K[:, pi], C[:, pj], params))
    np.testing.assert_allclose(A2, A[np.ix_(pi, pj)], atol=1e-12)
    out2 = tri_attend(q, K[:, pi], V[:, pi], C[:, pj], variant, integration, params)
    np.testing.assert_allclose(out2, out, atol=1e-12)


@pytest.mark.parametrize("variant", [TriVariant.TDP, TriVariant.TSDP])
def test_key_context_exchange_transposes_grid(variant):
    rng = np.random.default_rng(8)
    q, K, C = rng.normal(size=4), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    S = tri_score(variant, q, K, C, TriParams())
    # equal up to summation order, which the compiled kernel does not preserve
    np.testing.assert_allclose(tri_score(variant, q, C, K, TriParams()), S.T, rtol=0, atol=1e-12)


def test_default_pairing():
    assert DEFAULT_INTEGRATION[TriVariant.TADD] is ValueIntegration.ADDITIVE
    assert DEFAULT_INTEGRATION[TriVariant.TDP] is ValueIntegration.MULTIPLICATIVE
    assert DEFAULT_INTEGRATION[TriVariant.TSDP] is ValueIntegration.MULTIPLICATIVE
    assert DEFAULT_INTEGRATION[TriVariant.TRILI_FULL] is ValueIntegration.BILINEAR
    assert DEFAULT_INTEGRATION[TriVariant.TRILI_ECON] is ValueIntegration.BILINEAR
