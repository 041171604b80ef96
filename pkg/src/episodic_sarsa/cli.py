"""Command-line runner: ``episodic-sarsa run --config exp.json [--mode ...]``.

One JSON config describes the MDP, features, policy family, schedule and
seeds.  Outputs are written to the output directory:

* ``history_seed<k>.csv`` and ``summary.json`` (mode ``train``)
* ``certification.json`` (mode ``certify``)
* ``oracle.json`` (mode ``oracle``)

Exit status: 0 when every executed check passes, 1 when some check fails,
2 for config errors, 3 for assumption violations, 4 for numeric failures.
Outputs are byte-identical across reruns of the same config and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import instances
from .certification import (
    ShellGrid,
    check_absorption_moments,
    check_contraction,
    check_lipschitz_lemmas,
    check_mean_field,
    check_negative_definiteness,
    check_square_integrability,
    check_stability_margin,
    compute_constants,
)
from .chain import AssumptionError, NotProperError, absorption_second_moment, analyze, applicable_cases
from .linear_fa import (
    FeatureError,
    FeatureMatrix,
    NoConvergenceError,
    NotNegativeDefiniteError,
    assemble,
    exact_q,
    solve_coupled_fixed_point,
)
from .mdp import MdpError, MdpSpec, PolicyTable, check, discount_transform, from_dict
from .policies import PolicyFamily, evaluate
from .trainer import EpisodeCapExceeded, StepSchedule, TrainingDiverged, history_rows, train

CONFIG_VERSION = 1
OUT_ENV = "EPISODIC_SARSA_OUT"
MODES = ("train", "certify", "oracle", "all")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERIC = 0, 1, 2, 3, 4

BUILTINS = {
    "one-shot": instances.one_shot,
    "chain-1": instances.chain1,
    "self-loop": instances.self_loop,
    "gridlet": instances.gridlet,
}

CONFIG_KEYS = frozenset({
    "version", "mdp", "discount", "features", "family", "schedule", "episodes", "seeds", "cadence",
    "output_dir", "mode", "tolerance", "certification", "workers", "backend", "nonconvergent_demo",
})
CERT_DEFAULTS = {
    "policy_samples": 1000,
    "pair_count": 1000,
    "constants_samples": 200,
    "theta_samples": 20,
    "mean_field_episodes": 100_000,
    "square_episodes": 20_000,
    "moment_episodes": 1_000_000,
    "contraction_policies": 100,
    "contraction_q": 100,
    "nu": 0.1,
    "radii": 12,
    "directions": 64,
}


class ConfigError(ValueError):
    """The experiment config is malformed or references missing files."""


@dataclass
class ExperimentConfig:
    spec: MdpSpec
    phi: FeatureMatrix
    family: PolicyFamily
    schedule: StepSchedule
    episodes: int
    seeds: list[int]
    cadence: int
    output_dir: Path
    mode: str
    tolerance: float | None
    certification: dict = field(default_factory=dict)
    workers: int = 1
    backend: str | None = None
    nonconvergent_demo: bool = False
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config loading


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _load_mdp(entry, base: Path) -> MdpSpec:
    _require(isinstance(entry, str), "'mdp' must be a file path or 'builtin:<name>'")
    if entry.startswith("builtin:"):
        name = entry.split(":", 1)[1]
        _require(name in BUILTINS, f"unknown builtin MDP {name!r}; have {sorted(BUILTINS)}")
        return BUILTINS[name]()
    path = base / entry
    _require(path.is_file(), f"MDP file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"MDP file {path} is not valid JSON: {exc}") from None
    try:
        return from_dict(doc, name=path.stem)
    except (MdpError, TypeError, KeyError) as exc:
        raise ConfigError(f"MDP file {path}: {exc}") from None


def _load_features(entry, spec: MdpSpec, base: Path) -> FeatureMatrix:
    entry = entry or {"kind": "tabular"}
    _require(isinstance(entry, dict), "'features' must be an object")
    kind = entry.get("kind", "tabular")
    if kind == "tabular":
        return FeatureMatrix.tabular(spec, scale=float(entry.get("scale", 1.0)))
    if kind == "gridlet":
        return instances.gridlet_features(spec, scale=float(entry.get("scale", 0.5)))
    _require(kind == "matrix", f"unknown feature kind {kind!r}")
    if "rows" in entry:
        rows = entry["rows"]
    else:
        _require("file" in entry, "matrix features need 'rows' or 'file'")
        path = base / entry["file"]
        _require(path.is_file(), f"feature file not found: {path}")
        if path.suffix == ".json":
            rows = json.loads(path.read_text())
        else:
            rows = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    try:
        phi = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"feature matrix is not numeric: {exc}") from None
    _require(phi.ndim == 2 and phi.shape[0] == spec.n_pairs,
             f"feature matrix must have {spec.n_pairs} rows (one per state-action pair), got shape {phi.shape}")
    return FeatureMatrix(phi)


def _load_family(entry, spec: MdpSpec) -> PolicyFamily:
    _require(isinstance(entry, dict), "'family' must be an object")
    kind = entry.get("kind")
    if kind == "constant":
        if "policy" in entry:
            probs = np.array(entry["policy"], dtype=float)
            _require(probs.shape == (spec.n_states, spec.n_actions),
                     f"constant policy must be {spec.n_states}x{spec.n_actions}")
            return PolicyFamily.constant(PolicyTable(probs, float(entry.get("epsilon", 0.0))))
        return PolicyFamily.constant(PolicyTable.uniform(spec.n_states, spec.n_actions))
    _require(kind in ("eps_soft_softmax", "eps_greedy"), f"unknown family kind {kind!r}")
    _require("epsilon" in entry, f"{kind} family needs 'epsilon'")
    return PolicyFamily(kind, epsilon=float(entry["epsilon"]), temperature=float(entry.get("temperature", 1.0)),
                        n_actions=spec.n_actions)


def load_config(path: str | Path, mode: str | None = None, out: str | None = None,
                seed_override: list[int] | None = None) -> ExperimentConfig:
    """Parse and validate an experiment config; raise :class:`ConfigError` on any problem."""
    path = Path(path)
    _require(path.is_file(), f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    _require(isinstance(doc, dict), "config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    _require(doc.get("version") == CONFIG_VERSION, f"config 'version' must be {CONFIG_VERSION}")
    _require("mdp" in doc, "config needs 'mdp'")
    base = path.parent

    spec = _load_mdp(doc["mdp"], base)
    if doc.get("discount") is not None:
        gamma = doc["discount"]
        _require(isinstance(gamma, (int, float)) and 0.0 < gamma <= 1.0, "'discount' must lie in (0, 1]")
        spec = discount_transform(spec, float(gamma))
    try:
        phi = _load_features(doc.get("features"), spec, base)
        family = _load_family(doc.get("family", {"kind": "constant"}), spec)
        sched = doc.get("schedule", {})
        _require(isinstance(sched, dict), "'schedule' must be an object")
        schedule = StepSchedule(float(sched.get("alpha0", 1.0)), float(sched.get("t0", 1000.0)),
                                sched.get("kind", "harmonic"))
    except FeatureError:
        raise
    except (MdpError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    episodes = doc.get("episodes", 10_000)
    _require(isinstance(episodes, int) and episodes >= 1, "'episodes' must be an integer >= 1")
    seeds = seed_override if seed_override is not None else doc.get("seeds", [0])
    _require(isinstance(seeds, list) and len(seeds) > 0 and all(isinstance(s, int) and s >= 0 for s in seeds),
             "'seeds' must be a nonempty list of nonnegative integers")
    cadence = doc.get("cadence", 1000)
    _require(isinstance(cadence, int) and cadence >= 1, "'cadence' must be an integer >= 1")
    mode = mode or doc.get("mode", "all")
    _require(mode in MODES, f"mode must be one of {MODES}")
    tolerance = doc.get("tolerance", 0.05)
    _require(tolerance is None or (isinstance(tolerance, (int, float)) and tolerance > 0),
             "'tolerance' must be positive or null")
    cert = doc.get("certification", {})
    _require(isinstance(cert, dict), "'certification' must be an object")
    unknown = set(cert) - set(CERT_DEFAULTS) - {"epsilon"}
    _require(not unknown, f"unknown certification keys: {sorted(unknown)}")
    workers = doc.get("workers", 1)
    _require(isinstance(workers, int) and workers >= 1, "'workers' must be an integer >= 1")
    demo = bool(doc.get("nonconvergent_demo", False))
    _require(family.kind != "eps_greedy" or demo,
             "eps_greedy is discontinuous and only runs with \"nonconvergent_demo\": true")
    out_dir = out or os.environ.get(OUT_ENV) or doc.get("output_dir", "out")
    out_path = Path(out_dir) if Path(out_dir).is_absolute() or out or os.environ.get(OUT_ENV) else base / out_dir
    return ExperimentConfig(spec, phi, family, schedule, episodes, list(seeds), cadence, out_path, mode,
                            None if tolerance is None else float(tolerance), {**CERT_DEFAULTS, **cert},
                            workers, doc.get("backend"), demo, doc)


# ---------------------------------------------------------------------------
# serialization


def _plain(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        return val if math.isfinite(val) else repr(val)
    return obj


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")


def _cell(val) -> str:
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    return str(val)


def write_history(path: Path, history: list[dict]) -> None:
    header, rows = history_rows(history)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


# ---------------------------------------------------------------------------
# modes


def _reference(cfg: ExperimentConfig) -> tuple[np.ndarray | None, dict]:
    """theta* for the configured family: the TD fixed point or the coupled fixed point."""
    if cfg.family.kind == "constant":
        td = assemble(cfg.spec, cfg.family.base_policy, cfg.phi)
        return td.theta_pi, {"method": "td_fixed_point", "residual": td.residual}
    if cfg.nonconvergent_demo:
        return None, {"method": "none", "reason": "nonconvergent demo family has no certified fixed point"}
    res = solve_coupled_fixed_point(cfg.family, cfg.spec, cfg.phi)
    return res.theta, {"method": "coupled_fixed_point", "residual": res.residual, "iterations": res.iterations}


def _train_one(cfg: ExperimentConfig, seed: int, reference):
    result = train(cfg.spec, cfg.phi, cfg.family, cfg.schedule, cfg.episodes, seed,
                   reference=reference, cadence=cfg.cadence, backend=cfg.backend)
    return seed, result.theta, result.history


def run_train(cfg: ExperimentConfig) -> tuple[dict, bool]:
    theta_star, ref_info = _reference(cfg)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_train_one, cfg, s, theta_star) for s in cfg.seeds]
            results = [f.result() for f in futures]
    else:
        results = [_train_one(cfg, s, theta_star) for s in cfg.seeds]
    per_seed = []
    for seed, theta, history in results:
        write_history(cfg.output_dir / f"history_seed{seed}.csv", history)
        entry = {"seed": seed, "theta_final": theta,
                 "max_theta_norm": max(float(np.linalg.norm(h["theta"])) for h in history)}
        if theta_star is not None:
            entry["distance"] = float(np.linalg.norm(theta - theta_star))
        per_seed.append(entry)
    summary = {"episodes": cfg.episodes, "seeds": cfg.seeds, "theta_star": theta_star, "reference": ref_info,
               "runs": per_seed}
    passed = True
    if theta_star is not None:
        dists = [e["distance"] for e in per_seed]
        summary["median_distance"] = float(np.median(dists))
        if cfg.tolerance is not None:
            limit = cfg.tolerance * (1.0 + float(np.linalg.norm(theta_star)))
            passed = summary["median_distance"] <= limit
            summary["convergence"] = {"limit": limit, "rule": "median distance <= tolerance * (1 + |theta*|)",
                                      "passed": passed}
    return summary, passed


def run_certify(cfg: ExperimentConfig) -> tuple[dict, bool]:
    c = cfg.certification
    seed = cfg.seeds[0]
    spec, phi, fam = cfg.spec, cfg.phi, cfg.family
    eps = float(c.get("epsilon", fam.epsilon if fam.epsilon > 0 else 1.0 / spec.n_actions))
    constants = compute_constants(spec, phi, eps, c["constants_samples"], seed)
    reports = [
        check_negative_definiteness(spec, phi, eps, c["policy_samples"], seed),
        check_lipschitz_lemmas(spec, phi, eps, c["pair_count"], seed, c["constants_samples"]),
        check_contraction(spec, phi, eps, c["contraction_policies"], c["contraction_q"], seed),
        check_mean_field(spec, phi, fam, c["theta_samples"], c["mean_field_episodes"], seed, cfg.backend),
        check_square_integrability(spec, phi, fam, c["theta_samples"], c["square_episodes"], seed,
                                   constants.widened(constants.zeta, constants.xi), cfg.backend),
    ]
    theta_star, _ = _reference(cfg)
    pi_star = evaluate(fam, theta_star if theta_star is not None else np.zeros(phi.n_features), phi)
    reports.append(check_absorption_moments(spec, pi_star, c["moment_episodes"], seed, cfg.backend))
    if theta_star is not None:
        grid = ShellGrid(c["nu"], c["radii"], c["directions"])
        reports.append(check_stability_margin(spec, phi, fam, theta_star, grid, seed, constants=constants))
    passed = all(r.passed for r in reports)
    doc = {"seed": seed, "epsilon": eps, "constants": constants.to_dict(), "passed": passed,
           "reports": [r.to_dict() for r in reports]}
    return doc, passed


def run_oracle(cfg: ExperimentConfig) -> dict:
    spec, phi = cfg.spec, cfg.phi
    theta_star, ref_info = _reference(cfg)
    if cfg.family.kind == "constant":
        pi, label = cfg.family.base_policy, "constant family policy"
    elif theta_star is not None:
        pi, label = evaluate(cfg.family, theta_star, phi), "family policy at the coupled fixed point"
    else:
        pi, label = PolicyTable.uniform(spec.n_states, spec.n_actions), "uniform policy"
    ca = analyze(spec, pi)
    td = assemble(spec, pi, phi, ca)
    return {
        "mdp": spec.name,
        "policy": {"description": label, "probs": pi.probs},
        "pairs": [f"{s}/{a}" for s in spec.transient_states for a in spec.actions],
        "eta": ca.eta_pi,
        "fundamental": ca.fundamental,
        "t": ca.t_vec,
        "t_variance": ca.var_vec,
        "expected_length": ca.expected_length,
        "length_variance": ca.length_variance,
        "length_second_moment": absorption_second_moment(ca),
        "spectral_radius": ca.spectral_radius,
        "contraction_cases": applicable_cases(spec, ca),
        "q": exact_q(spec, pi, ca),
        "A": td.a_pi,
        "b": td.b_pi,
        "theta_pi": td.theta_pi,
        "theta_star": theta_star,
        "reference": ref_info,
    }


def run(cfg: ExperimentConfig) -> int:
    """Execute the configured mode, write outputs, and return the exit status."""
    check(cfg.spec)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    passed = True
    if cfg.mode in ("oracle", "all"):
        write_json(cfg.output_dir / "oracle.json", run_oracle(cfg))
    if cfg.mode in ("certify", "all"):
        doc, ok = run_certify(cfg)
        write_json(cfg.output_dir / "certification.json", doc)
        passed &= ok
    if cfg.mode in ("train", "all"):
        summary, ok = run_train(cfg)
        summary["config"] = cfg.raw
        write_json(cfg.output_dir / "summary.json", summary)
        passed &= ok
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# entry point


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seed list must hold nonnegative integers")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="episodic-sarsa", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--mode", choices=MODES, help="overrides the config's mode (default all)")
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    p.add_argument("--seed-override", type=_seed_list, help="comma-separated seeds replacing the config's list")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.mode, args.out, args.seed_override)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MdpError as exc:
        print(f"assumption violated (valid absorbing MDP): {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except NotProperError as exc:
        print(f"assumption violated (proper policies): {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (FeatureError, AssumptionError, NotNegativeDefiniteError) as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (NoConvergenceError, TrainingDiverged, EpisodeCapExceeded, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
