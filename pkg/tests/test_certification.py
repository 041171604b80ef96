import json

import numpy as np
import pytest

from episodic_sarsa import FeatureMatrix, PolicyFamily, PolicyTable, instances, sample_delta_eps
from episodic_sarsa import solve_coupled_fixed_point
from episodic_sarsa.certification import (BASE_Z, ShellGrid, bonferroni_z, check_absorption_moments,
                                          check_contraction, check_lipschitz_lemmas, check_mean_field,
                                          check_negative_definiteness, check_square_integrability,
                                          check_stability_margin, compute_constants, derive_constants,
                                          lipschitz_ratios, random_thetas)
from episodic_sarsa.mdp import MdpSpec


def test_bonferroni_threshold():
    assert bonferroni_z(1) == BASE_Z
    assert bonferroni_z(0) == BASE_Z
    zs = [bonferroni_z(n) for n in (1, 2, 10, 100, 1000)]
    assert zs == sorted(zs)
    # two-sided tail mass per test is alpha / n
    from scipy.stats import norm
    assert 2 * norm.sf(bonferroni_z(60)) == pytest.approx(2 * norm.sf(BASE_Z) / 60, rel=1e-9)


def test_one_shot_constants(one_shot, eye1):
    c = compute_constants(one_shot, eye1, 1.0, 10)
    assert (c.zeta, c.xi, c.c_p, c.c_d) == (1.0, 1.0, 1.0, 2.0)
    assert c.k_bound == pytest.approx(6.0)
    assert c.c_b == pytest.approx(2.0)


def test_chain1_constants(chain1, eye2):
    c = compute_constants(chain1, eye2, 0.05, 50)
    assert c.c_p == 2.0
    assert c.zeta >= 1.0
    assert c.c_d == pytest.approx(c.zeta * (1 + 2 * c.zeta))


def test_sampled_constants_grow_with_samples(chain1, eye2):
    # the same seed draws a prefix, so the running maxima can only grow
    small = compute_constants(chain1, eye2, 0.05, 20, seed=3)
    big = compute_constants(chain1, eye2, 0.05, 200, seed=3)
    assert big.zeta >= small.zeta and big.xi >= small.xi


def test_widening_keeps_the_larger_value():
    c = derive_constants(2.0, 1.0, 1.0, 1.0, 2, 10, 0.1)
    w = c.widened(1.5, 3.0)
    assert (w.zeta, w.xi) == (2.0, 3.0)
    assert w.c_a > c.c_a


def test_lipschitz_ratios(chain1, eye2):
    p1 = sample_delta_eps(chain1, 0.05, 1)
    assert lipschitz_ratios(chain1, eye2, p1, p1) == {"P": 0.0, "D": 0.0, "b": 0.0, "A": 0.0}
    # one state: P_pi differs only through pi(.|s0), so ||dP|| <= ||dpi|| <= C_P = 2
    p2 = sample_delta_eps(chain1, 0.05, 2)
    assert 0.0 < lipschitz_ratios(chain1, eye2, p1, p2)["P"] <= 2.0


def test_lipschitz_lemmas_hold(suite_case):
    _, spec, phi = suite_case
    rep = check_lipschitz_lemmas(spec, phi, 0.05, pair_count=100, constants_samples=50)
    assert rep.passed and rep.status == "certified"
    assert rep.metrics["max_ratio_P"] <= rep.metrics["c_p"]


@pytest.mark.parametrize("factory", [instances.chain1, lambda: instances.discounted_self_loop(0.9),
                                     instances.gridlet])
def test_negative_definiteness(factory):
    spec = factory()
    phi = instances.gridlet_features(spec) if spec.name == "gridlet" else FeatureMatrix.tabular(spec)
    rep = check_negative_definiteness(spec, phi, 0.05, 200)
    assert rep.passed
    assert rep.metrics["max_eigenvalue"] < 0


def test_contraction_on_case_ii_instances(suite_case):
    _, spec, phi = suite_case
    rep = check_contraction(spec, phi, 0.05, policy_samples=20, q_samples=50)
    assert rep.passed
    assert rep.metrics["max_gap_projection"] <= 1e-10
    assert rep.metrics["max_gap_idempotence"] <= 1e-10


def test_contraction_reports_chain1_cases(chain1, eye2):
    rep = check_contraction(chain1, eye2, 0.05, policy_samples=10, q_samples=20)
    assert rep.metrics["cases_seen"] == ["case_i", "case_ii"]
    assert rep.metrics["max_gap_case_ii"] <= 0


def test_contraction_notes_missing_cases():
    trans = np.zeros((2, 1, 3))
    trans[0, 0, 1] = 1.0
    trans[1, 0, 2] = 1.0
    spec = MdpSpec(("s0", "s1"), ("t",), ("a",), trans, np.zeros_like(trans), np.array([1.0, 0.0]))
    rep = check_contraction(spec, FeatureMatrix.tabular(spec), 1.0, policy_samples=2, q_samples=5)
    assert rep.metrics["cases_seen"] == []
    assert any("discount_transform" in n for n in rep.notes)


def test_square_integrability_one_shot(one_shot, eye1):
    rep = check_square_integrability(one_shot, eye1, PolicyFamily.constant(PolicyTable.uniform(1, 1)),
                                     theta_samples=[[0.0]], episodes=100)
    row = rep.rows[0]
    assert row["mc_mean"] == 1.0 and row["se"] == 0.0
    assert row["bound"] == pytest.approx(6.0)
    assert rep.passed


def test_square_integrability_on_suite(suite_case):
    _, spec, phi = suite_case
    rep = check_square_integrability(spec, phi, PolicyFamily.softmax(spec, 0.05, 1.0), 5, 5000)
    assert rep.passed


def test_mean_field_one_shot_is_exact(one_shot, eye1):
    rep = check_mean_field(one_shot, eye1, PolicyFamily.constant(PolicyTable.uniform(1, 1)), [[0.0]], 50)
    assert rep.rows[0]["mc_mean"] == [1.0] and rep.rows[0]["exact"] == pytest.approx([1.0])
    assert rep.passed


def test_mean_field_on_suite(suite_case):
    _, spec, phi = suite_case
    rep = check_mean_field(spec, phi, PolicyFamily.softmax(spec, 0.05, 2.0), 4, 20_000)
    assert rep.passed
    assert rep.metrics["comparisons"] == 4 * phi.n_features


def test_absorption_moments(chain1):
    rep = check_absorption_moments(chain1, PolicyTable.uniform(1, 2), 100_000)
    assert rep.passed
    exact = {r["quantity"]: r["exact"] for r in rep.rows}
    assert exact["second_moment"] == pytest.approx(20 / 9)


def test_stability_margin_certified_for_smooth_family(chain1, eye2):
    fam = PolicyFamily.softmax(chain1, 0.05, 8.0)
    star = solve_coupled_fixed_point(fam, chain1, eye2).theta
    rep = check_stability_margin(chain1, eye2, fam, star, ShellGrid(radii=6, directions=16))
    assert rep.passed and rep.status == "certified"
    assert rep.metrics["nonnegative_points"] == 0


def test_stability_margin_report_is_consistent_at_low_temperature(chain1, eye2):
    fam = PolicyFamily.softmax(chain1, 0.05, 0.01)
    star = solve_coupled_fixed_point(fam, chain1, eye2).theta
    rep = check_stability_margin(chain1, eye2, fam, star, ShellGrid(radii=6, directions=16))
    assert rep.passed == (rep.metrics["nonnegative_points"] == 0)
    assert rep.passed == (rep.status == "certified")
    assert len(rep.rows) == min(20, rep.metrics["nonnegative_points"])


def test_stability_margin_constant_family(chain1, eye2):
    fam = PolicyFamily.constant(PolicyTable.uniform(1, 2))
    rep = check_stability_margin(chain1, eye2, fam, np.array([1.0, 5 / 3]), ShellGrid(radii=4, directions=8))
    assert rep.passed
    assert rep.metrics["lipschitz_estimate"] == 0.0


def test_reports_are_deterministic_json(chain1, eye2):
    fam = PolicyFamily.softmax(chain1, 0.05, 4.0)
    a = check_mean_field(chain1, eye2, fam, 3, 2000, seed=5).to_json()
    b = check_mean_field(chain1, eye2, fam, 3, 2000, seed=5).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["schema_version"] == 1 and doc["name"] == "mean_field"


def test_text_rendering(chain1, eye2):
    text = check_negative_definiteness(chain1, eye2, 0.05, 5).to_text()
    assert text.startswith("== negative_definiteness: certified (pass)")
    assert "max_eigenvalue" in text


def test_random_thetas_lie_in_ball():
    th = random_thetas(500, 3, 2.0, 0)
    assert th.shape == (500, 3)
    assert np.linalg.norm(th, axis=1).max() <= 2.0
    np.testing.assert_array_equal(th, random_thetas(500, 3, 2.0, 0))
