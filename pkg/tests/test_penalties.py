import numpy as np
import pytest

from bolm.model_core import (
    INTERCEPT,
    Dataset,
    EquationTerms,
    Group,
    ModelSpec,
    OrdinalPair,
    ParamLayout,
    design_matrices,
)
from bolm.penalties import (
    PenaltyConfig,
    PenaltyOperator,
    build_ordering_penalty,
    build_penalty_matrix,
    difference_matrix,
    ordering_state,
    penalty_value,
)


def intercept_spec(d1: int, d2: int, uniform: bool = False) -> ModelSpec:
    t = EquationTerms()
    return ModelSpec(OrdinalPair(d1, d2), (), t, t, t, uniform_association=uniform)


def covariate_spec() -> ModelSpec:
    dep = EquationTerms(("x",), ("x",))
    glob = EquationTerms(("x",), ())
    return ModelSpec(OrdinalPair(3, 3), ("x",), dep, glob, dep)


def test_difference_matrix_forms():
    D1 = difference_matrix(4, 1)
    assert D1.shape == (3, 4)
    np.testing.assert_array_equal(D1 @ np.ones(4), np.zeros(3))
    np.testing.assert_array_equal(D1 @ np.arange(4.0), np.ones(3))
    D2 = difference_matrix(5, 2)
    assert D2.shape == (3, 5)
    x = np.arange(5.0)
    np.testing.assert_array_equal(D2 @ x, np.zeros(3))
    np.testing.assert_array_equal(D2 @ (x * x), np.full(3, 2.0))


def test_arc1_first_difference_quadratic_form_matrix():
    # length-3 association intercept block: m1 * m2 = 1 * 3
    spec = intercept_spec(2, 4)
    cfg = PenaltyConfig.arc1({(3, INTERCEPT): 1.0})
    P = build_penalty_matrix(cfg, spec)
    blk = ParamLayout(spec).block(3, INTERCEPT)
    expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
    np.testing.assert_allclose(P[blk.slice, blk.slice], expected)


def test_arc1_association_block_chains_flattened_grid():
    # the 36-entry association block is treated as one chain: the
    # first-difference operator has a single constant null vector
    spec = intercept_spec(7, 7)
    cfg = PenaltyConfig.arc1({(3, INTERCEPT): 1.0})
    P = build_penalty_matrix(cfg, spec)
    blk = ParamLayout(spec).block(3, INTERCEPT)
    sub = P[blk.slice, blk.slice]
    assert np.linalg.matrix_rank(sub) == 35
    np.testing.assert_allclose(sub @ np.ones(36), np.zeros(36), atol=1e-12)


def test_matrix_and_factored_sum_agree_across_families():
    spec = covariate_spec()
    layout = ParamLayout(spec)
    rng = np.random.default_rng(314)
    configs = [
        PenaltyConfig.ridge({(3, INTERCEPT): 2.5, (1, "x"): 0.7}),
        PenaltyConfig.arc1({(3, INTERCEPT): 1.2, (3, "x"): 4.0}),
        PenaltyConfig.arc2(
            {(3, INTERCEPT): 3.0, (4, INTERCEPT): 0.5, (1, INTERCEPT): 1.5},
            {(3, INTERCEPT): 1, (4, INTERCEPT): 1, (1, INTERCEPT): 1},
        ),
        PenaltyConfig.composite(
            PenaltyConfig.ridge({(1, INTERCEPT): 0.3}),
            PenaltyConfig.arc1({(3, INTERCEPT): 9.0}),
        ),
    ]
    for cfg in configs:
        P = build_penalty_matrix(cfg, spec)
        op = PenaltyOperator(cfg, spec)
        np.testing.assert_allclose(P, op.matrix(), atol=1e-12)
        for _ in range(30):
            beta = rng.standard_normal(layout.size)
            direct = float(beta @ P @ beta)
            factored = op.tau(beta)
            assert abs(direct - factored) <= 1e-12 * max(1.0, abs(direct))
            np.testing.assert_allclose(op.grad(beta), P @ beta, atol=1e-10)


def test_penalty_value_matches_quadratic_form():
    spec = intercept_spec(4, 4)
    cfg = PenaltyConfig.arc1({(3, INTERCEPT): 7.0})
    layout = ParamLayout(spec)
    rng = np.random.default_rng(1)
    beta = rng.standard_normal(layout.size)
    P = build_penalty_matrix(cfg, spec)
    assert penalty_value(cfg, spec, beta) == pytest.approx(beta @ P @ beta, rel=1e-12)


def test_global_coefficients_cannot_be_penalized():
    spec = covariate_spec()
    cfg = PenaltyConfig.ridge({(2, "x"): 1.0})
    with pytest.raises(ValueError, match="global coefficient"):
        cfg.block_operators(spec)
    # marginal and association intercepts are fair targets
    ok = PenaltyConfig.ridge({(1, INTERCEPT): 1.0, (3, INTERCEPT): 1.0})
    assert len(ok.block_operators(spec)) == 2


def test_uniform_association_intercept_is_a_silent_singleton():
    spec = intercept_spec(3, 3, uniform=True)
    cfg = PenaltyConfig.arc1({(3, INTERCEPT): 5.0})
    assert cfg.block_operators(spec) == []
    beta = np.ones(ParamLayout(spec).size)
    assert penalty_value(cfg, spec, beta) == 0.0


def test_arc2_rank_drops_by_s_squared():
    spec = intercept_spec(7, 7)
    layout = ParamLayout(spec)
    blk = layout.block(3, INTERCEPT)
    for s in (1, 2, 3, 4):
        cfg = PenaltyConfig.arc2(
            {(3, INTERCEPT): 1.0, (4, INTERCEPT): 1.0},
            {(3, INTERCEPT): s, (4, INTERCEPT): s},
        )
        P = build_penalty_matrix(cfg, spec)
        sub = P[blk.slice, blk.slice]
        assert np.linalg.matrix_rank(sub) == 36 - s * s


def test_arc2_annihilates_low_degree_polynomial_surfaces():
    spec = intercept_spec(7, 7)
    layout = ParamLayout(spec)
    blk = layout.block(3, INTERCEPT)
    s = 3
    cfg = PenaltyConfig.arc2(
        {(3, INTERCEPT): 1.0, (4, INTERCEPT): 1.0},
        {(3, INTERCEPT): s, (4, INTERCEPT): s},
    )
    r = np.arange(1.0, 7.0)
    c = np.arange(1.0, 7.0)
    beta = np.zeros(layout.size)
    beta[blk.slice] = (np.outer(r**2, c**2) + 2 * np.outer(r, c**2) + 3.0).reshape(-1)
    assert penalty_value(cfg, spec, beta) == 0.0
    beta[blk.slice] = np.outer(r**3, np.ones(6)).reshape(-1)
    assert penalty_value(cfg, spec, beta) > 1.0


def test_arc2_streams_act_along_their_own_direction():
    spec = intercept_spec(5, 4)
    layout = ParamLayout(spec)
    blk = layout.block(3, INTERCEPT)
    # stream 3 differences the surface down the rows (first margin),
    # stream 4 along the columns, so each ignores the other's variation
    row_only = np.outer(np.array([0.0, 1.0, 4.0, 9.0]), np.ones(3))
    col_only = np.outer(np.ones(4), np.array([0.0, 1.0, 4.0]))
    stream3 = PenaltyConfig.arc2({(3, INTERCEPT): 1.0}, {(3, INTERCEPT): 1})
    stream4 = PenaltyConfig.arc2({(4, INTERCEPT): 1.0}, {(4, INTERCEPT): 1})
    beta = np.zeros(layout.size)
    beta[blk.slice] = row_only.reshape(-1)
    assert penalty_value(stream3, spec, beta) > 0.0
    assert penalty_value(stream4, spec, beta) == 0.0
    beta[blk.slice] = col_only.reshape(-1)
    assert penalty_value(stream3, spec, beta) == 0.0
    assert penalty_value(stream4, spec, beta) > 0.0


def test_is_null_tracks_family_not_values():
    assert PenaltyConfig.none().is_null
    assert not PenaltyConfig.ridge({(3, INTERCEPT): 0.0}).is_null
    assert not PenaltyConfig.ordering(0.0, 0.0).is_null
    assert PenaltyConfig.composite(PenaltyConfig.none()).is_null


def test_build_penalty_matrix_rejects_ordering_family():
    spec = intercept_spec(3, 3)
    with pytest.raises(ValueError, match="ordering"):
        build_penalty_matrix(PenaltyConfig.ordering(1.0, 1.0), spec)
    with pytest.raises(ValueError):
        PenaltyOperator(PenaltyConfig.ordering(1.0, 1.0), spec)


def test_ordering_state_counts_only_violations():
    spec = intercept_spec(3, 3)
    layout = ParamLayout(spec)
    counts = np.array([[5, 3, 2], [2, 4, 3], [1, 2, 5]])
    dataset = Dataset(spec.pair, (Group(np.array([]), counts),))
    X = design_matrices(spec, dataset)
    weights = np.array([float(counts.sum())])

    beta = np.zeros(layout.size)
    b1 = layout.block(1, INTERCEPT)
    b2 = layout.block(2, INTERCEPT)
    beta[b1.slice] = [-1.0, 1.0]
    beta[b2.slice] = [-0.5, 0.5]
    state = ordering_state(X, weights, spec.pair, beta, 2.0, 3.0)
    assert state.tau(beta) == 0.0
    np.testing.assert_allclose(state.grad(beta), np.zeros(layout.size))

    # reverse the first margin: one violated difference of size 2
    beta[b1.slice] = [1.0, -1.0]
    state = ordering_state(X, weights, spec.pair, beta, 2.0, 3.0)
    assert state.tau(beta) == pytest.approx(weights[0] * 2.0 * 4.0)
    P = build_ordering_penalty(spec, dataset, beta, 2.0, 3.0)
    assert state.tau(beta) == pytest.approx(beta @ P @ beta)


def test_ordering_margin_shifts_the_violation_boundary():
    spec = intercept_spec(3, 3)
    layout = ParamLayout(spec)
    counts = np.full((3, 3), 2)
    dataset = Dataset(spec.pair, (Group(np.array([]), counts),))
    X = design_matrices(spec, dataset)
    weights = np.array([float(counts.sum())])
    beta = np.zeros(layout.size)
    beta[layout.block(1, INTERCEPT).slice] = [0.0, 0.1]
    beta[layout.block(2, INTERCEPT).slice] = [0.0, 5.0]
    tight = ordering_state(X, weights, spec.pair, beta, 1.0, 1.0, margin=0.0)
    assert tight.tau(beta) == 0.0
    wide = ordering_state(X, weights, spec.pair, beta, 1.0, 1.0, margin=0.5)
    assert wide.tau(beta) > 0.0
