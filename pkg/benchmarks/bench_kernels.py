"""Compare the compiled and pure-Python episode kernels.

Times Monte-Carlo sampling under a fixed policy and a short training run on
each canonical MDP, checks that both backends produce identical bytes, and
prints episodes per second with the speedup.

    python3 benchmarks/bench_kernels.py [--episodes 20000] [--repeats 3]
"""

import argparse
import time

import numpy as np

from episodic_sarsa import PolicyFamily, PolicyTable, StepSchedule, instances, train
from episodic_sarsa._kernels import BACKENDS
from episodic_sarsa.trainer import KernelModel, sample_episodes


def _best_time(fn, repeats: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def _sample(spec, phi, backend, episodes):
    model = KernelModel.build(spec, phi)
    pi = PolicyTable.uniform(spec.n_states, spec.n_actions)
    theta = np.linspace(-1.0, 1.0, phi.n_features)
    return lambda: sample_episodes(spec, phi, pi, theta, episodes, 0, backend=backend, model=model)


def _train(spec, phi, backend, episodes):
    fam = PolicyFamily.softmax(spec, 0.05, 4.0)
    return lambda: train(spec, phi, fam, StepSchedule(), episodes, 0, backend=backend)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--episodes", type=int, default=20_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if "cython" not in BACKENDS:
        print("compiled core not built; only the python backend is available")
    backends = sorted(BACKENDS)
    print(f"{'mdp':<20}{'task':<8}" + "".join(f"{b + ' ep/s':>16}" for b in backends) + f"{'speedup':>10}  same")
    for name, (spec, phi) in instances.canonical_suite().items():
        for task, make in (("sample", _sample), ("train", _train)):
            rates, outs = {}, {}
            for b in backends:
                secs, outs[b] = _best_time(make(spec, phi, b, args.episodes), args.repeats)
                rates[b] = args.episodes / secs
            if task == "sample":
                keys = [(o.h.tobytes(), o.lengths.tobytes(), o.returns.tobytes()) for o in outs.values()]
            else:
                keys = [o.theta.tobytes() for o in outs.values()]
            same = all(k == keys[0] for k in keys)
            speedup = rates["cython"] / rates["python"] if len(backends) > 1 else 1.0
            print(f"{name:<20}{task:<8}" + "".join(f"{rates[b]:>16,.0f}" for b in backends)
                  + f"{speedup:>9.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
