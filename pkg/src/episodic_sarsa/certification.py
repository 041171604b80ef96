"""Numerical certification of the convergence hypotheses on concrete instances.

Every check is deterministic given its seed and returns a :class:`CheckReport`
that serializes to JSON and renders as a text table.  Quantities defined as
maxima over the whole eps-soft set (zeta, xi) can only be sampled; they are
reported as lower bounds.  Where a lemma's inequality needs such a maximum to
hold for a specific policy, the check folds that policy into the maximum so
the tested inequality is exactly the one the proof establishes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm as normal_dist

from .chain import analyze, applicable_cases, contraction_coefficient, norm, weighted_norm
from .linear_fa import FeatureMatrix, project, td_matrices
from .mdp import MdpSpec, PolicyTable
from .policies import PolicyFamily, estimate_lipschitz, evaluate, sample_delta_eps
from .trainer import KernelModel, sample_episodes

SCHEMA_VERSION = 1
BASE_Z = 3.0


@dataclass
class CheckReport:
    name: str
    passed: bool
    status: str
    metrics: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **_plain(asdict(self))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"== {self.name}: {self.status} ({'pass' if self.passed else 'FAIL'})"]
        for note in self.notes:
            lines.append(f"   note: {note}")
        for key, val in self.metrics.items():
            lines.append(f"   {key:<28} {_fmt(val)}")
        if self.rows:
            cols = list(self.rows[0])
            lines.append("   " + "  ".join(f"{c:>14}" for c in cols))
            for row in self.rows:
                lines.append("   " + "  ".join(f"{_fmt(row[c]):>14}" for c in cols))
        return "\n".join(lines)


def _fmt(val) -> str:
    if isinstance(val, float):
        return f"{val:.6g}"
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in val) + "]"
    return str(val)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def bonferroni_z(n_tests: int, base: float = BASE_Z) -> float:
    """z threshold keeping the family-wise error at the two-sided tail of ``base``."""
    if n_tests <= 1:
        return base
    alpha = 2.0 * normal_dist.sf(base)
    return max(base, float(normal_dist.isf(alpha / (2.0 * max(1, n_tests)))))


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ConstantsReport:
    zeta: float
    xi: float
    c_p: float
    c_d: float
    c_b: float
    c_a: float
    k_bound: float
    phi_max: float
    r_max: float
    n_pairs: int
    sample_count: int
    epsilon: float
    lower_bounds: tuple[str, ...] = ("zeta", "xi", "c_d", "c_b", "c_a", "k_bound")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def widened(self, zeta: float, xi: float) -> ConstantsReport:
        return derive_constants(max(self.zeta, zeta), max(self.xi, xi), self.phi_max, self.r_max, self.n_pairs,
                                self.sample_count, self.epsilon)


def derive_constants(zeta: float, xi: float, phi_max: float, r_max: float, n_pairs: int, sample_count: int,
                     epsilon: float) -> ConstantsReport:
    c_p = float(n_pairs)
    c_d = zeta * (1.0 + zeta * c_p)
    c_b = c_d * n_pairs * phi_max * r_max
    c_a = n_pairs * phi_max ** 2 * ((1.0 + math.sqrt(n_pairs)) * c_d + xi * c_p)
    k_bound = 2.0 * phi_max ** 2 * math.sqrt(n_pairs) * (2.0 * zeta + 1.0) * zeta
    return ConstantsReport(zeta, xi, c_p, c_d, c_b, c_a, k_bound, phi_max, r_max, n_pairs, sample_count, epsilon)


def _policy_norms(spec: MdpSpec, pi: PolicyTable) -> tuple[float, float]:
    ca = analyze(spec, pi)
    return norm(ca.fundamental, "spectral"), float(np.max(ca.eta_pi))


def compute_constants(spec: MdpSpec, phi: FeatureMatrix, epsilon: float, sample_count: int = 1000,
                      seed: int = 0) -> ConstantsReport:
    """Sample zeta = max ||(I - P_pi)^-1|| and xi = max ||D_pi|| and derive the Lipschitz constants."""
    rng = np.random.default_rng(seed)
    zeta = xi = 0.0
    for _ in range(sample_count):
        z, x = _policy_norms(spec, sample_delta_eps(spec, epsilon, rng))
        zeta, xi = max(zeta, z), max(xi, x)
    return derive_constants(zeta, xi, phi.phi_max, spec.reward_bound, spec.n_pairs, sample_count, epsilon)


# ---------------------------------------------------------------------------
# Lipschitz lemmas


def check_lipschitz_lemmas(spec: MdpSpec, phi: FeatureMatrix, epsilon: float, pair_count: int = 1000,
                           seed: int = 0, constants_samples: int = 200) -> CheckReport:
    """Test ||X_pi1 - X_pi2|| <= C_X ||pi1 - pi2|| for X in {P, D, b, A}."""
    rng = np.random.default_rng(seed)
    base = compute_constants(spec, phi, epsilon, constants_samples, seed)
    pairs = [(sample_delta_eps(spec, epsilon, rng), sample_delta_eps(spec, epsilon, rng)) for _ in range(pair_count)]
    cache = {}

    def quantities(pi: PolicyTable):
        key = id(pi)
        if key not in cache:
            ca = analyze(spec, pi)
            a, b = td_matrices(spec, phi, ca)
            cache[key] = (ca, a, b, norm(ca.fundamental, "spectral"))
        return cache[key]

    zeta = max(base.zeta, *(quantities(p)[3] for pair in pairs for p in pair)) if pairs else base.zeta
    xi = max(base.xi, *(float(quantities(p)[0].eta_pi.max()) for pair in pairs for p in pair)) if pairs else base.xi
    consts = base.widened(zeta, xi)
    worst = {"P": 0.0, "D": 0.0, "b": 0.0, "A": 0.0}
    violations = []
    for k, (p1, p2) in enumerate(pairs):
        ratios = lipschitz_ratios(spec, phi, p1, p2, quantities(p1), quantities(p2))
        for name, limit in (("P", consts.c_p), ("D", consts.c_d), ("b", consts.c_b), ("A", consts.c_a)):
            worst[name] = max(worst[name], ratios[name])
            if ratios[name] > limit * (1.0 + 1e-12):
                violations.append({"pair": k, "quantity": name, "ratio": ratios[name], "constant": limit})
    metrics = {f"max_ratio_{k}": v for k, v in worst.items()}
    metrics.update({"c_p": consts.c_p, "c_d": consts.c_d, "c_b": consts.c_b, "c_a": consts.c_a,
                    "zeta": consts.zeta, "xi": consts.xi, "pairs": pair_count, "violations": len(violations)})
    return CheckReport(
        "lipschitz_lemmas", not violations, "certified" if not violations else "violated", metrics, violations,
        ["zeta and xi are sampled maxima (lower bounds) widened by every tested policy"],
    )


def lipschitz_ratios(spec: MdpSpec, phi: FeatureMatrix, p1: PolicyTable, p2: PolicyTable, q1=None, q2=None) -> dict:
    """Observed ||X1 - X2|| / ||pi1 - pi2|| for P, D, b and A; zero for identical policies."""
    dpi = float(np.linalg.norm(p1.vector - p2.vector))
    if dpi == 0.0:
        return {"P": 0.0, "D": 0.0, "b": 0.0, "A": 0.0}
    if q1 is None:
        ca1 = analyze(spec, p1)
        q1 = (ca1, *td_matrices(spec, phi, ca1))
    if q2 is None:
        ca2 = analyze(spec, p2)
        q2 = (ca2, *td_matrices(spec, phi, ca2))
    ca1, a1, b1 = q1[:3]
    ca2, a2, b2 = q2[:3]
    return {
        "P": norm(ca1.p_pi - ca2.p_pi, "spectral") / dpi,
        "D": float(np.max(np.abs(ca1.eta_pi - ca2.eta_pi))) / dpi,
        "b": float(np.linalg.norm(b1 - b2)) / dpi,
        "A": norm(a1 - a2, "spectral") / dpi,
    }


# ---------------------------------------------------------------------------
# negative definiteness


def check_negative_definiteness(spec: MdpSpec, phi: FeatureMatrix, epsilon: float, sample_count: int = 1000,
                                seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    top = -np.inf
    exceptions = []
    for k in range(sample_count):
        pi = sample_delta_eps(spec, epsilon, rng)
        a, _ = td_matrices(spec, phi, analyze(spec, pi))
        lam = float(np.linalg.eigvalsh(0.5 * (a + a.T)).max())
        top = max(top, lam)
        if lam >= 0.0:
            exceptions.append({"sample": k, "max_eigenvalue": lam})
    return CheckReport(
        "negative_definiteness", not exceptions, "certified" if not exceptions else "violated",
        {"max_eigenvalue": top, "samples": sample_count, "epsilon": epsilon, "exceptions": len(exceptions)},
        exceptions,
    )


# ---------------------------------------------------------------------------
# contraction and projection


def check_contraction(spec: MdpSpec, phi: FeatureMatrix, epsilon: float, policy_samples: int = 100,
                      q_samples: int = 100, seed: int = 0, slack: float = 1e-10) -> CheckReport:
    """Brute-force the weighted-norm contraction of P_pi and the projection properties.

    For each sampled policy and random q: ||P q||_eta <= beta ||q||_eta with
    beta the largest pair-chain row sum (when every row is substochastic),
    ||P q||_eta^2 <= beta_i ||q||_eta^2 for the initial-distribution branch,
    ||Pi q||_eta <= ||q||_eta and Pi Pi q = Pi q.
    """
    rng = np.random.default_rng(seed)
    worst = {"case_ii": -np.inf, "case_i_squared": -np.inf, "projection": -np.inf, "idempotence": 0.0}
    seen_cases: set[str] = set()
    violations = []
    for k in range(policy_samples):
        ca = analyze(spec, sample_delta_eps(spec, epsilon, rng))
        cases = applicable_cases(spec, ca)
        seen_cases.update(cases)
        beta2 = contraction_coefficient(spec, ca, "case_ii") if "case_ii" in cases else None
        beta1 = contraction_coefficient(spec, ca, "case_i") if "case_i" in cases else None
        for _ in range(q_samples):
            q = rng.standard_normal(spec.n_pairs)
            nq = weighted_norm(q, ca)
            npq = weighted_norm(ca.p_pi @ q, ca)
            pq = project(q, phi, ca)
            gaps = {"projection": weighted_norm(pq, ca) - nq,
                    "idempotence": float(np.max(np.abs(project(pq, phi, ca) - pq)))}
            if beta2 is not None:
                gaps["case_ii"] = npq - beta2 * nq
            if beta1 is not None:
                gaps["case_i_squared"] = npq ** 2 - beta1 * nq ** 2
            for name, gap in gaps.items():
                worst[name] = max(worst[name], gap)
                scale = 1.0 + nq ** 2 if name == "case_i_squared" else 1.0 + nq
                if gap > slack * scale:
                    violations.append({"policy": k, "check": name, "gap": gap})
    tested = {name: v for name, v in worst.items() if np.isfinite(v)}
    notes = ["gaps are lhs - rhs; a check passes when every gap is <= slack"]
    if not seen_cases:
        notes.append("neither contraction branch holds for the sampled policies; "
                     "applying discount_transform makes every pair-chain row substochastic")
    return CheckReport(
        "contraction", not violations, "certified" if not violations else "violated",
        {"policies": policy_samples, "q_per_policy": q_samples, "slack": slack,
         "cases_seen": sorted(seen_cases), **{f"max_gap_{k}": v for k, v in tested.items()},
         "violations": len(violations)},
        violations[:20], notes,
    )


# ---------------------------------------------------------------------------
# Monte-Carlo checks


def random_thetas(n: int, d: int, radius: float, seed: int) -> np.ndarray:
    """``n`` points uniform in the Euclidean ball of ``radius``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(n, 1)) ** (1.0 / d)


def _theta_list(theta_samples, d: int, seed: int) -> np.ndarray:
    if isinstance(theta_samples, (int, np.integer)):
        return random_thetas(int(theta_samples), d, 10.0, seed)
    return np.atleast_2d(np.asarray(theta_samples, dtype=float))


def check_square_integrability(spec: MdpSpec, phi: FeatureMatrix, family: PolicyFamily, theta_samples=20,
                               episodes: int = 20_000, seed: int = 0, constants: ConstantsReport | None = None,
                               backend: str | None = None) -> CheckReport:
    """Monte-Carlo E||H(theta, X)||^2 against the analytic square-integrability bound."""
    thetas = _theta_list(theta_samples, phi.n_features, seed)
    if constants is None:
        constants = compute_constants(spec, phi, family.epsilon, 200, seed)
    model = KernelModel.build(spec, phi)
    z = bonferroni_z(len(thetas))
    rows = []
    passed = True
    for k, theta in enumerate(thetas):
        pi = evaluate(family, theta, phi)
        zeta = max(constants.zeta, norm(analyze(spec, pi).fundamental, "spectral"))
        k_bound = derive_constants(zeta, constants.xi, constants.phi_max, constants.r_max, constants.n_pairs,
                                   constants.sample_count, constants.epsilon).k_bound
        tn = float(np.linalg.norm(theta))
        bound = k_bound * (constants.r_max ** 2 + 4.0 * constants.phi_max ** 2 * tn ** 2)
        sample = sample_episodes(spec, phi, pi, theta, episodes, seed, stream=k, backend=backend, model=model)
        sq = np.einsum("ij,ij->i", sample.h, sample.h)
        mean = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
        ok = mean - z * se <= bound
        passed &= ok
        rows.append({"sample": k, "theta_norm": tn, "mc_mean": mean, "se": se, "bound": bound, "pass": ok})
    return CheckReport(
        "square_integrability", passed, "certified" if passed else "violated",
        {"theta_samples": len(thetas), "episodes": episodes, "z": z, "zeta": constants.zeta,
         "max_mean_over_bound": max(r["mc_mean"] / r["bound"] for r in rows) if rows else 0.0},
        rows, [f"pass iff mc_mean - {z:.3f} se <= bound (Bonferroni over theta samples)"],
    )


def check_mean_field(spec: MdpSpec, phi: FeatureMatrix, family: PolicyFamily, theta_samples=20,
                     episodes: int = 100_000, seed: int = 0, backend: str | None = None) -> CheckReport:
    """Monte-Carlo mean of H(theta, X) against A_{pi_theta} theta + b_{pi_theta}, componentwise."""
    thetas = _theta_list(theta_samples, phi.n_features, seed)
    model = KernelModel.build(spec, phi)
    n_tests = len(thetas) * phi.n_features
    z = bonferroni_z(n_tests)
    rows = []
    worst = 0.0
    passed = True
    for k, theta in enumerate(thetas):
        pi = evaluate(family, theta, phi)
        a, b = td_matrices(spec, phi, analyze(spec, pi))
        exact = a @ theta + b
        sample = sample_episodes(spec, phi, pi, theta, episodes, seed, stream=k, backend=backend, model=model)
        mean = sample.h.mean(axis=0)
        se = sample.h.std(axis=0, ddof=1) / math.sqrt(episodes) if episodes > 1 else np.zeros_like(mean)
        slack = 1e-12 * (1.0 + np.abs(exact))
        dev = np.abs(mean - exact)
        with np.errstate(divide="ignore", invalid="ignore"):
            zs = np.where(se > 0, dev / se, np.where(dev <= slack, 0.0, np.inf))
        ok = bool(np.all(dev <= z * se + slack))
        passed &= ok
        worst = max(worst, float(zs.max()))
        rows.append({"sample": k, "max_abs_z": float(zs.max()), "exact": exact.tolist(), "mc_mean": mean.tolist(),
                     "pass": ok})
    return CheckReport(
        "mean_field", passed, "certified" if passed else "violated",
        {"theta_samples": len(thetas), "episodes": episodes, "comparisons": n_tests, "z": z, "max_abs_z": worst},
        rows, [f"{n_tests} comparisons; per-comparison threshold {z:.3f} se keeps the family-wise error "
               f"at the two-sided {BASE_Z:g}-sigma level (Bonferroni)"],
    )


def check_absorption_moments(spec: MdpSpec, pi: PolicyTable, episodes: int = 1_000_000, seed: int = 0,
                             backend: str | None = None) -> CheckReport:
    """Empirical E[T], Var[T], E[T^2] against the fundamental-matrix closed forms."""
    from .chain import absorption_second_moment

    ca = analyze(spec, pi)
    phi = FeatureMatrix(np.eye(spec.n_pairs))
    sample = sample_episodes(spec, phi, pi, np.zeros(spec.n_pairs), episodes, seed, stream=0, backend=backend)
    t = sample.lengths.astype(float)
    n = len(t)
    m1, m2 = float(t.mean()), float((t * t).mean())
    var = float(t.var(ddof=1))
    se_m1 = math.sqrt(var / n)
    se_m2 = float((t * t).std(ddof=1) / math.sqrt(n))
    # delta-method standard error of the sample variance
    m4 = float(((t - m1) ** 4).mean())
    se_var = math.sqrt(max(m4 - var ** 2, 0.0) / n)
    exact = {"mean": ca.expected_length, "variance": ca.length_variance, "second_moment": absorption_second_moment(ca)}
    est = {"mean": m1, "variance": var, "second_moment": m2}
    ses = {"mean": se_m1, "variance": se_var, "second_moment": se_m2}
    z = bonferroni_z(3)
    rows = []
    passed = True
    for key in ("mean", "variance", "second_moment"):
        dev = abs(est[key] - exact[key])
        ok = dev <= z * ses[key] + 1e-12 * (1.0 + abs(exact[key]))
        passed &= ok
        rows.append({"quantity": key, "exact": exact[key], "mc": est[key], "se": ses[key], "pass": ok})
    return CheckReport("absorption_moments", passed, "certified" if passed else "violated",
                       {"episodes": episodes, "z": z}, rows)


# ---------------------------------------------------------------------------
# stability margin


@dataclass(frozen=True)
class ShellGrid:
    nu: float = 0.1
    radii: int = 12
    directions: int = 64


def check_stability_margin(spec: MdpSpec, phi: FeatureMatrix, family: PolicyFamily, theta_star: np.ndarray,
                           grid: ShellGrid = ShellGrid(), seed: int = 0, lipschitz_samples: int = 200,
                           constants: ConstantsReport | None = None) -> CheckReport:
    """Sign of (theta - theta*) . (A_{pi_theta} theta + b_{pi_theta}) on the shell nu <= |theta - theta*| <= 1/nu."""
    theta_star = np.asarray(theta_star, dtype=float)
    d = phi.n_features
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((grid.directions, d))
    dirs = np.vstack([dirs / np.linalg.norm(dirs, axis=1, keepdims=True), np.eye(d), -np.eye(d)])
    radii = np.geomspace(grid.nu, 1.0 / grid.nu, grid.radii)
    if constants is None:
        constants = compute_constants(spec, phi, family.epsilon, 200, seed)
    c_hat = estimate_lipschitz(family, phi, lipschitz_samples, radius=float(np.linalg.norm(theta_star)) + 1.0 / grid.nu,
                               seed=seed)
    shift = constants.c_a * c_hat * float(np.linalg.norm(theta_star)) + constants.c_b * c_hat
    worst = -np.inf
    worst_bound_eig = -np.inf
    bad = []
    for r in radii:
        for u in dirs:
            theta = theta_star + r * u
            a, b = td_matrices(spec, phi, analyze(spec, evaluate(family, theta, phi)))
            g = float((theta - theta_star) @ (a @ theta + b))
            worst = max(worst, g / r ** 2)
            sym = 0.5 * (a + a.T) + shift * np.eye(d)
            worst_bound_eig = max(worst_bound_eig, float(np.linalg.eigvalsh(sym).max()))
            if not g < 0.0:
                bad.append({"radius": float(r), "direction": u.tolist(), "value": g})
    certified = not bad
    return CheckReport(
        "stability_margin", certified, "certified" if certified else "condition not certified",
        {"nu": grid.nu, "grid_points": len(radii) * len(dirs), "nonnegative_points": len(bad),
         "max_value_over_radius_sq": worst, "lipschitz_estimate": c_hat, "shift_c1_norm_plus_c2": shift,
         "max_eig_shifted_A": worst_bound_eig, "sufficient_condition_holds": bool(worst_bound_eig < 0.0)},
        bad[:20],
        ["nonnegative grid points mean the stability condition is not certified for this family; "
         "this is a finding about the instance, not a tool failure",
         "lipschitz_estimate and the derived shift are sampled lower bounds"],
    )
