"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

The lines are collected in ``RESULTS`` and echoed again in the terminal
summary by ``conftest.py`` so they survive output capture.
"""

import json
import time

import numpy as np

from episodic_sarsa import FeatureMatrix, PolicyFamily, PolicyTable, StepSchedule, absorption_second_moment
from episodic_sarsa import analyze, assemble, discount_transform, exact_q, instances, solve_coupled_fixed_point
from episodic_sarsa import train
from episodic_sarsa.certification import (bonferroni_z, check_absorption_moments, check_contraction,
                                          check_lipschitz_lemmas, check_mean_field, check_negative_definiteness,
                                          check_square_integrability, compute_constants)
from episodic_sarsa.trainer import TrainState, history_rows, sample_episodes
from oracles import chain1_uniform_exact, discounted_q

RESULTS: list[str] = []
SUITE = instances.canonical_suite()


def report(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


def _uniform(spec):
    return PolicyTable.uniform(spec.n_states, spec.n_actions)


def _literal_exceedances(rows) -> int:
    """Comparisons whose |z| exceeds 3 without the multiple-testing correction."""
    return sum(1 for r in rows for z in np.atleast_1d(r.get("max_abs_z", 0.0)) if z > 3.0)


def test_criterion_1_oracle_exactness():
    start = time.perf_counter()
    exact = {k: np.array([float(x) for x in v]) if isinstance(v, list) else float(v)
             for k, v in chain1_uniform_exact().items()}
    chain = instances.chain1()
    ca = analyze(chain, _uniform(chain))
    td = assemble(chain, _uniform(chain), FeatureMatrix(np.eye(2)), ca)
    one = instances.one_shot()
    ca1 = analyze(one, _uniform(one))
    td1 = assemble(one, _uniform(one), FeatureMatrix(np.eye(1)), ca1)
    errors = {
        "eta": np.max(np.abs(ca.eta_pi - exact["eta"])),
        "t": np.max(np.abs(ca.t_vec - exact["t"])),
        "var": np.max(np.abs(ca.var_vec - exact["var"])),
        "second_moment": abs(absorption_second_moment(ca) - exact["second_moment"]),
        "theta_pi": np.max(np.abs(td.theta_pi - exact["q"])),
        "one_shot": max(abs(ca1.eta_pi[0] - 1), abs(ca1.t_vec[0] - 1), abs(ca1.var_vec[0]),
                        abs(td1.theta_pi[0] - 1)),
    }
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    passed = worst <= 1e-10 and elapsed < 1.0
    report(1, passed, f"max abs error {worst:.2e} (tol 1e-10), {elapsed:.3f}s (< 1s)")
    assert passed, errors


def test_criterion_2_mean_field_identity():
    start = time.perf_counter()
    lines, passed, literal, comparisons = [], True, 0, 0
    for name, (spec, phi) in SUITE.items():
        rep = check_mean_field(spec, phi, PolicyFamily.softmax(spec, 0.05, 1.0), 20, 100_000, seed=0)
        passed &= rep.passed
        literal += _literal_exceedances(rep.rows)
        comparisons += rep.metrics["comparisons"]
        lines.append(f"{name} max|z|={rep.metrics['max_abs_z']:.2f}")
    elapsed = time.perf_counter() - start
    passed &= elapsed < 120.0
    z = bonferroni_z(comparisons // len(SUITE))
    report(2, passed, f"20 theta x 1e5 episodes per MDP; {', '.join(lines)}; family-wise 3-sigma "
                      f"(per-comparison z {z:.2f}); {literal} of {comparisons} comparisons beyond a bare 3 SE "
                      f"(expected {comparisons * 2 * 0.00135:.2f} by chance); {elapsed:.0f}s (< 120s)")
    assert passed


def _criterion_3_runs(spec, phi, tau):
    fam = PolicyFamily.softmax(spec, 0.05, tau)
    fp = solve_coupled_fixed_point(fam, spec, phi)
    assert fp.residual < 1e-9
    dists = [np.linalg.norm(train(spec, phi, fam, StepSchedule(1.0, 1000.0), 200_000, seed).theta - fp.theta)
             for seed in range(10)]
    limit = 0.05 * (1.0 + np.linalg.norm(fp.theta))
    return float(np.median(dists)), float(limit), fp.residual


def test_criterion_3_convergence_to_coupled_fixed_point():
    lines, passed = [], True
    for name, (spec, phi) in SUITE.items():
        start = time.perf_counter()
        for tau in (4.0, 8.0):
            med, limit, res = _criterion_3_runs(spec, phi, tau)
            passed &= med <= limit
            lines.append(f"{name} tau={tau:g} median {med:.4f} <= {limit:.4f}")
        elapsed = time.perf_counter() - start
        passed &= elapsed < 300.0
        lines[-1] += f" ({elapsed:.0f}s)"
    report(3, passed, "10 seeds x 2e5 episodes; " + "; ".join(lines))
    assert passed


def test_criterion_4_negative_definiteness():
    worst, exceptions = -np.inf, 0
    for spec, phi in SUITE.values():
        for eps in (0.01, 0.05, 0.1):
            rep = check_negative_definiteness(spec, phi, eps, 1000, seed=0)
            worst = max(worst, rep.metrics["max_eigenvalue"])
            exceptions += rep.metrics["exceptions"]
    passed = exceptions == 0 and worst < 0
    report(4, passed, f"3 MDPs x 3 eps x 1000 policies; max eigenvalue {worst:.3e}; {exceptions} exceptions")
    assert passed


def test_criterion_5_lipschitz_lemmas():
    lines, violations = [], 0
    for name, (spec, phi) in SUITE.items():
        rep = check_lipschitz_lemmas(spec, phi, 0.05, pair_count=1000, seed=0)
        assert rep.metrics["c_p"] == spec.n_pairs
        violations += rep.metrics["violations"]
        m = rep.metrics
        lines.append(f"{name} P {m['max_ratio_P']:.2f}/{m['c_p']:g} D {m['max_ratio_D']:.2f}/{m['c_d']:.1f} "
                     f"b {m['max_ratio_b']:.2f}/{m['c_b']:.1f} A {m['max_ratio_A']:.2f}/{m['c_a']:.1f}")
    passed = violations == 0
    report(5, passed, f"1000 pairs per MDP, max ratio/constant: {'; '.join(lines)}; {violations} violations")
    assert passed


def test_criterion_6_contraction_and_projection():
    grid = discount_transform(instances.gridlet(), 0.9)
    cases = {
        "chain-1": SUITE["chain-1"],
        "self-loop-gamma0.9": SUITE["self-loop-gamma0.9"],
        "one-shot": (instances.one_shot(), FeatureMatrix(np.eye(1))),
        "gridlet-gamma0.9": (grid, instances.gridlet_features(grid)),
    }
    lines, violations = [], 0
    for name, (spec, phi) in cases.items():
        eps = 0.05 if spec.n_actions > 1 else 1.0
        rep = check_contraction(spec, phi, eps, policy_samples=100, q_samples=100, seed=0, slack=1e-10)
        assert "case_ii" in rep.metrics["cases_seen"], name
        violations += rep.metrics["violations"]
        lines.append(f"{name} gap {rep.metrics['max_gap_case_ii']:.1e}")
    passed = violations == 0
    report(6, passed, f"100 policies x 100 q, slack 1e-10; max ||Pq|| - beta ||q|| per MDP: {', '.join(lines)}; "
                      f"projection and idempotence included; {violations} violations")
    assert passed


def test_criterion_7_square_integrability_and_moments():
    lines, passed, literal = [], True, 0
    for name, (spec, phi) in SUITE.items():
        fam = PolicyFamily.softmax(spec, 0.05, 1.0)
        sq = check_square_integrability(spec, phi, fam, 20, 100_000, seed=0,
                                        constants=compute_constants(spec, phi, 0.05, 200, 0))
        mom = check_absorption_moments(spec, _uniform(spec), 1_000_000, seed=0)
        passed &= sq.passed and mom.passed
        for r in mom.rows:
            literal += abs(r["mc"] - r["exact"]) > 3 * r["se"]
        lines.append(f"{name} max mean/bound {sq.metrics['max_mean_over_bound']:.2e}")
    report(7, passed, f"20 theta per MDP; {', '.join(lines)}; E[T], Var[T], E[T^2] over 1e6 episodes "
                      f"within the family-wise 3-sigma band ({literal} of 9 beyond a bare 3 SE)")
    assert passed


def test_criterion_8_discount_transform():
    worst = 0.0
    for factory in (instances.chain1, instances.gridlet, instances.self_loop):
        spec = factory()
        pi = _uniform(spec)
        for gamma in (0.5, 0.9, 0.99):
            q = exact_q(discount_transform(spec, gamma), pi)
            oracle = discounted_q(spec.completed_transition(), spec.reward, pi.probs, gamma, spec.n_states,
                                  arrival=True)
            worst = max(worst, float(np.max(np.abs(q - oracle))))
    passed = worst <= 1e-10
    report(8, passed, f"chain-1, gridlet, self-loop x gamma in (0.5, 0.9, 0.99); max |q_transformed - q_gamma| "
                      f"{worst:.1e} (tol 1e-10; rewards discounted to their arrival step)")
    assert passed


def _rows(history):
    header, rows = history_rows(history)
    return header, [[repr(v) for v in row] for row in rows]


def test_criterion_9_determinism_and_restore():
    ok = True
    for spec, phi in SUITE.values():
        fam = PolicyFamily.softmax(spec, 0.05, 4.0)
        ref = solve_coupled_fixed_point(fam, spec, phi).theta
        args = (spec, phi, fam, StepSchedule(), 20_000)
        a = train(*args, 5, reference=ref, cadence=500)
        b = train(*args, 5, reference=ref, cadence=500)
        ok &= a.theta.tobytes() == b.theta.tobytes() and _rows(a.history) == _rows(b.history)
        head = train(spec, phi, fam, StepSchedule(), 7_500, 5, reference=ref, cadence=500)
        state = TrainState.from_dict(json.loads(json.dumps(head.state.to_dict())))
        tail = train(spec, phi, fam, StepSchedule(), 12_500, 5, reference=ref, cadence=500, state=state)
        ok &= tail.theta.tobytes() == a.theta.tobytes()
        ok &= _rows(head.history + tail.history) == _rows(a.history)
        s1 = sample_episodes(spec, phi, _uniform(spec), ref, 10_000, 5)
        s2 = sample_episodes(spec, phi, _uniform(spec), ref, 10_000, 5)
        ok &= s1.h.tobytes() == s2.h.tobytes()
    report(9, ok, "reruns bit-identical; JSON checkpoint at episode 7500 resumes bit-exactly on all 3 MDPs")
    assert ok
