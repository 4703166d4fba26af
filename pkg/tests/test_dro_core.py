import math

import numpy as np
import pytest

from codat.dro_core import (
    AmbiguityConfig,
    ClassRiskVector,
    ProbabilityDistribution,
    chi_square_divergence,
    equivalent_objective,
    equivalent_objective_gradient,
    lagrange_multiplier_star,
    mean_variance_under,
    oracle_worst_case,
    simplex_project,
    uniform_distribution,
    worst_case_distribution,
)


def dirac(num_classes, index=0):
    w = np.zeros(num_classes)
    w[index] = 1.0
    return ProbabilityDistribution(w)


# ---------------------------------------------------------------- types


def test_distribution_rejects_negative_weights():
    with pytest.raises(ValueError):
        ProbabilityDistribution([0.6, 0.5, -0.1])


def test_distribution_rejects_bad_mass():
    with pytest.raises(ValueError):
        ProbabilityDistribution([0.5, 0.6])


def test_distribution_rejects_single_class():
    with pytest.raises(ValueError):
        ProbabilityDistribution([1.0])


def test_distribution_weights_are_immutable():
    dist = uniform_distribution(3)
    with pytest.raises(ValueError):
        dist.weights[0] = 0.9


def test_risk_vector_rejects_nonfinite_and_negative():
    with pytest.raises(ValueError):
        ClassRiskVector([1.0, np.inf])
    with pytest.raises(ValueError):
        ClassRiskVector([1.0, -0.5])


def test_ambiguity_radius_must_stay_below_dirac_bound():
    with pytest.raises(ValueError):
        AmbiguityConfig(uniform_distribution(3), eta=2.0)
    with pytest.raises(ValueError):
        AmbiguityConfig(uniform_distribution(3), eta=-0.1)
    # zero radius collapses the ball to the center and is allowed
    assert AmbiguityConfig(uniform_distribution(3), eta=0.0).eta == 0.0


# ---------------------------------------------------------- divergence


def test_divergence_dirac_versus_uniform_is_classes_minus_one():
    assert chi_square_divergence(dirac(10), uniform_distribution(10)) == 9.0


def test_divergence_dirac_versus_uniform_exact_for_many_sizes():
    for num_classes in (2, 3, 7, 49, 93, 100):
        d = chi_square_divergence(dirac(num_classes), uniform_distribution(num_classes))
        assert d == float(num_classes - 1)


def test_divergence_of_distribution_with_itself_is_zero():
    dist = ProbabilityDistribution([0.2, 0.3, 0.5])
    assert chi_square_divergence(dist, dist) == 0.0


def test_divergence_half_half_versus_uniform_four():
    p = ProbabilityDistribution([0.5, 0.5, 0.0, 0.0])
    assert chi_square_divergence(p, uniform_distribution(4)) == 1.0


def test_divergence_requires_absolute_continuity():
    p = ProbabilityDistribution([0.5, 0.25, 0.25])
    q = ProbabilityDistribution([0.0, 0.5, 0.5])
    with pytest.raises(ValueError, match="continuity"):
        chi_square_divergence(p, q)


def test_divergence_rejects_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        chi_square_divergence(uniform_distribution(3), uniform_distribution(4))


# ------------------------------------------------------------- moments


def test_moments_of_one_two_three_under_uniform():
    mean, variance = mean_variance_under(uniform_distribution(3), ClassRiskVector([1, 2, 3]))
    assert mean == pytest.approx(2.0, abs=1e-12)
    assert variance == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_moments_of_constant_risks():
    mean, variance = mean_variance_under(uniform_distribution(4), ClassRiskVector([2.5] * 4))
    assert mean == pytest.approx(2.5, abs=1e-12)
    assert variance == 0.0


def test_moments_variance_never_negative():
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = int(rng.integers(2, 12))
        w = rng.dirichlet(np.ones(k))
        r = rng.uniform(0, 5, size=k)
        _, variance = mean_variance_under(ProbabilityDistribution(w), ClassRiskVector(r))
        assert variance >= 0.0


# ------------------------------------------------- closed-form solution


def reference_instance():
    risks = ClassRiskVector([1.0, 2.0, 3.0])
    cfg = AmbiguityConfig(uniform_distribution(3), eta=0.1)
    return risks, cfg


def test_worst_case_closed_form_reference_values():
    risks, cfg = reference_instance()
    sol = worst_case_distribution(risks, cfg)
    assert sol.closed_form_valid
    assert not sol.degenerate
    np.testing.assert_allclose(
        sol.distribution.weights, [0.20423389, 0.33333333, 0.46243278], atol=1e-8
    )
    assert sol.objective_value == pytest.approx(2.258198889747161, abs=1e-12)
    assert sol.alpha_star == pytest.approx(1.2909944487358052, abs=1e-12)


def test_worst_case_sits_exactly_on_the_ball_boundary():
    risks, cfg = reference_instance()
    sol = worst_case_distribution(risks, cfg)
    assert chi_square_divergence(sol.distribution, cfg.p0) == pytest.approx(cfg.eta, abs=1e-8)


def test_worst_case_objective_equals_reweighted_risk():
    risks, cfg = reference_instance()
    sol = worst_case_distribution(risks, cfg)
    reweighted = float(np.dot(sol.distribution.weights, risks.risks))
    assert reweighted == pytest.approx(sol.objective_value, abs=1e-8)


def test_multiplier_reconstructs_the_worst_case():
    # p0 times the likelihood ratio 1 + (r - mean) / (2 alpha*) must rebuild p*.
    risks, cfg = reference_instance()
    sol = worst_case_distribution(risks, cfg)
    alpha = lagrange_multiplier_star(risks, cfg)
    mean, _ = mean_variance_under(cfg.p0, risks)
    ratio = 1.0 + (risks.risks - mean) / (2.0 * alpha)
    np.testing.assert_allclose(cfg.p0.weights * ratio, sol.distribution.weights, atol=1e-10)


def test_worst_case_constant_risks_degenerates_to_center():
    cfg = AmbiguityConfig(uniform_distribution(3), eta=0.1)
    sol = worst_case_distribution(ClassRiskVector([2.0, 2.0, 2.0]), cfg)
    assert sol.degenerate
    assert not sol.closed_form_valid
    np.testing.assert_array_equal(sol.distribution.weights, cfg.p0.weights)
    assert sol.objective_value == pytest.approx(2.0, abs=1e-12)


def test_worst_case_negative_entry_falls_back_to_oracle():
    cfg = AmbiguityConfig(uniform_distribution(3), eta=1.9)
    sol = worst_case_distribution(ClassRiskVector([0.0, 10.0, 10.0]), cfg)
    assert not sol.closed_form_valid
    assert not sol.degenerate
    # the constrained optimum drops the zero-risk class entirely
    assert sol.objective_value == pytest.approx(10.0, abs=1e-6)
    np.testing.assert_allclose(sol.distribution.weights, [0.0, 0.5, 0.5], atol=1e-6)


def test_worst_case_weights_grow_with_risk():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 50:
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        sol = worst_case_distribution(risks, cfg)
        if not sol.closed_form_valid:
            continue
        order = np.argsort(risks.risks)
        ordered_weights = sol.distribution.weights[order]
        ordered_risks = risks.risks[order]
        strict = np.diff(ordered_risks) > 0
        assert np.all(np.diff(ordered_weights)[strict] > 0)
        checked += 1


# --------------------------------------------------------- multiplier


def test_multiplier_special_ratios():
    # variance of [1,2,3] under uniform is 2/3; radius equal to the variance
    # gives alpha* = 1/2, radius at a quarter of it gives alpha* = 1.
    risks = ClassRiskVector([1.0, 2.0, 3.0])
    p0 = uniform_distribution(3)
    assert lagrange_multiplier_star(risks, AmbiguityConfig(p0, eta=2.0 / 3.0)) == pytest.approx(
        0.5, abs=1e-12
    )
    assert lagrange_multiplier_star(risks, AmbiguityConfig(p0, eta=1.0 / 6.0)) == pytest.approx(
        1.0, abs=1e-12
    )


def test_multiplier_undefined_for_constant_risks_or_zero_radius():
    p0 = uniform_distribution(3)
    with pytest.raises(ValueError):
        lagrange_multiplier_star(ClassRiskVector([1.0, 1.0, 1.0]), AmbiguityConfig(p0, eta=0.1))
    with pytest.raises(ValueError):
        lagrange_multiplier_star(ClassRiskVector([1.0, 2.0, 3.0]), AmbiguityConfig(p0, eta=0.0))


# ---------------------------------------------------------- objective


def test_equivalent_objective_reference_value():
    risks, cfg = reference_instance()
    assert equivalent_objective(risks, cfg) == pytest.approx(2.258198889747161, abs=1e-12)


def test_equivalent_objective_constant_risks_is_the_constant():
    cfg = AmbiguityConfig(uniform_distribution(3), eta=0.4)
    assert equivalent_objective(ClassRiskVector([1.7] * 3), cfg) == pytest.approx(1.7, abs=1e-12)


def test_equivalent_objective_zero_radius_is_the_mean():
    cfg = AmbiguityConfig(uniform_distribution(3), eta=0.0)
    assert equivalent_objective(ClassRiskVector([1, 2, 3]), cfg) == pytest.approx(2.0, abs=1e-12)


def test_equivalent_objective_bounded_by_mean_and_max():
    rng = np.random.default_rng(23)
    for _ in range(100):
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        sol = worst_case_distribution(risks, cfg)
        if not sol.closed_form_valid:
            continue
        mean, _ = mean_variance_under(cfg.p0, risks)
        value = equivalent_objective(risks, cfg)
        assert mean - 1e-12 <= value <= float(np.max(risks.risks)) + 1e-12


def test_equivalent_objective_nondecreasing_in_radius():
    rng = np.random.default_rng(31)
    for _ in range(50):
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        p0 = uniform_distribution(k)
        radii = np.sort(rng.uniform(0.0, 0.9, size=4))
        values = [equivalent_objective(risks, AmbiguityConfig(p0, eta=float(e))) for e in radii]
        assert np.all(np.diff(values) >= -1e-12)


# ------------------------------------------------------------ gradient


def central_difference_gradient(risks, cfg, h=1e-5):
    base = risks.risks
    grad = np.zeros(base.size)
    for i in range(base.size):
        bumped_up = base.copy()
        bumped_up[i] += h
        bumped_down = base.copy()
        bumped_down[i] -= h
        f_plus = equivalent_objective(ClassRiskVector(bumped_up), cfg)
        f_minus = equivalent_objective(ClassRiskVector(bumped_down), cfg)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def test_gradient_equals_worst_case_distribution_when_valid():
    risks, cfg = reference_instance()
    sol = worst_case_distribution(risks, cfg)
    np.testing.assert_allclose(
        equivalent_objective_gradient(risks, cfg), sol.distribution.weights, atol=1e-12
    )


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(5)
    for _ in range(50):
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0.1, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        _, variance = mean_variance_under(cfg.p0, risks)
        if variance < 1e-6:
            continue
        numeric = central_difference_gradient(risks, cfg)
        analytic = equivalent_objective_gradient(risks, cfg)
        np.testing.assert_allclose(analytic, numeric, atol=1e-5)


def test_gradient_constant_risks_returns_center():
    cfg = AmbiguityConfig(uniform_distribution(4), eta=0.3)
    np.testing.assert_array_equal(
        equivalent_objective_gradient(ClassRiskVector([2.0] * 4), cfg), cfg.p0.weights
    )


def test_gradient_entries_sum_to_one():
    rng = np.random.default_rng(13)
    for _ in range(50):
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        assert float(np.sum(equivalent_objective_gradient(risks, cfg))) == pytest.approx(
            1.0, abs=1e-9
        )


# -------------------------------------------------------------- oracle


def test_oracle_matches_closed_form_on_reference_instance():
    risks, cfg = reference_instance()
    _, objective = oracle_worst_case(risks, cfg)
    assert objective == pytest.approx(2.258198889747161, abs=1e-4)


def test_oracle_zero_radius_returns_center_and_mean():
    cfg = AmbiguityConfig(uniform_distribution(3), eta=0.0)
    dist, objective = oracle_worst_case(ClassRiskVector([1, 2, 3]), cfg)
    np.testing.assert_array_equal(dist.weights, cfg.p0.weights)
    assert objective == pytest.approx(2.0, abs=1e-12)


def test_oracle_iterate_is_always_feasible():
    rng = np.random.default_rng(17)
    for _ in range(20):
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 1.5 * (k - 1) / 2)))
        dist, objective = oracle_worst_case(risks, cfg)
        assert chi_square_divergence(dist, cfg.p0) <= cfg.eta + 1e-8
        assert objective == pytest.approx(float(np.dot(dist.weights, risks.risks)), abs=1e-12)


def test_oracle_rejects_bad_settings():
    risks, cfg = reference_instance()
    with pytest.raises(ValueError):
        oracle_worst_case(risks, cfg, iterations=0)
    with pytest.raises(ValueError):
        oracle_worst_case(risks, cfg, step_size=0.0)


# ---------------------------------------------------------- projection


def test_simplex_projection_fixes_points_already_on_simplex():
    np.testing.assert_allclose(
        simplex_project([0.2, 0.3, 0.5]).weights, [0.2, 0.3, 0.5], atol=1e-15
    )


def test_simplex_projection_symmetric_pair():
    np.testing.assert_allclose(simplex_project([1.0, 1.0]).weights, [0.5, 0.5], atol=1e-15)


def test_simplex_projection_clips_negative_coordinate():
    np.testing.assert_allclose(
        simplex_project([0.8, 0.4, -0.2]).weights, [0.7, 0.3, 0.0], atol=1e-12
    )


def test_simplex_projection_idempotent_and_nearest():
    rng = np.random.default_rng(29)
    for _ in range(50):
        k = int(rng.integers(2, 8))
        v = rng.normal(0, 2, size=k)
        projected = simplex_project(v).weights
        np.testing.assert_allclose(simplex_project(projected).weights, projected, atol=1e-12)
        # no sampled simplex point may sit closer to v than the projection
        best = float(np.linalg.norm(projected - v))
        for _ in range(200):
            q = rng.dirichlet(np.ones(k))
            assert best <= float(np.linalg.norm(q - v)) + 1e-9


def test_simplex_projection_rejects_nonfinite():
    with pytest.raises(ValueError):
        simplex_project([np.nan, 0.5])


# ------------------------------------------------- mixed random sweeps


def test_closed_form_agrees_with_oracle_on_random_instances():
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 40:
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        sol = worst_case_distribution(risks, cfg)
        if not sol.closed_form_valid:
            continue
        dist, objective = oracle_worst_case(risks, cfg)
        assert abs(objective - sol.objective_value) <= 1e-3
        assert float(np.max(np.abs(dist.weights - sol.distribution.weights))) <= 1e-3
        checked += 1


def test_closed_form_identities_on_random_instances():
    rng = np.random.default_rng(59)
    checked = 0
    while checked < 60:
        k = int(rng.integers(2, 11))
        risks = ClassRiskVector(rng.uniform(0, 5, size=k))
        cfg = AmbiguityConfig(uniform_distribution(k), eta=float(rng.uniform(0.05, 0.9)))
        sol = worst_case_distribution(risks, cfg)
        if not sol.closed_form_valid:
            continue
        assert chi_square_divergence(sol.distribution, cfg.p0) == pytest.approx(
            cfg.eta, abs=1e-8
        )
        assert float(np.dot(sol.distribution.weights, risks.risks)) == pytest.approx(
            sol.objective_value, abs=1e-8
        )
        alpha = lagrange_multiplier_star(risks, cfg)
        mean, _ = mean_variance_under(cfg.p0, risks)
        rebuilt = cfg.p0.weights * (1.0 + (risks.risks - mean) / (2.0 * alpha))
        np.testing.assert_allclose(rebuilt, sol.distribution.weights, atol=1e-10)
        checked += 1
