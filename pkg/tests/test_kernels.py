import numpy as np
import pytest

from episodic_sarsa import FeatureMatrix, PolicyFamily, PolicyTable, StepSchedule, evaluate, instances, train
from episodic_sarsa._kernels import BACKENDS, get_backend
from episodic_sarsa.trainer import EpisodeCapExceeded, KernelModel, _family_args, sample_episodes

needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled core not built")


def test_unknown_backend_is_rejected():
    with pytest.raises(ValueError, match="unavailable"):
        get_backend("fortran")


def test_python_backend_always_present():
    assert get_backend("python").__name__.endswith("_fallback")


@pytest.mark.parametrize("backend", sorted(BACKENDS))
@pytest.mark.parametrize("kind", ["softmax", "greedy", "constant"])
def test_policy_table_matches_family(suite_case, backend, kind):
    _, spec, phi = suite_case
    fam = {"softmax": PolicyFamily.softmax(spec, 0.05, 0.7),
           "greedy": PolicyFamily("eps_greedy", 0.05, n_actions=spec.n_actions),
           "constant": PolicyFamily.constant(PolicyTable.uniform(spec.n_states, spec.n_actions))}[kind]
    model = KernelModel.build(spec, phi)
    theta = np.random.default_rng(0).uniform(-3, 3, phi.n_features)
    pi = np.empty((spec.n_states, spec.n_actions))
    get_backend(backend).policy_table(*_family_args(fam, model), model.phi, theta, pi)
    np.testing.assert_allclose(pi, evaluate(fam, theta, phi).probs, rtol=0, atol=1e-14)


@needs_cython
def test_backends_sample_identical_episodes(suite_case):
    _, spec, phi = suite_case
    pi = PolicyTable.uniform(spec.n_states, spec.n_actions)
    theta = np.linspace(-1, 1, phi.n_features)
    a = sample_episodes(spec, phi, pi, theta, 500, 4, backend="cython")
    b = sample_episodes(spec, phi, pi, theta, 500, 4, backend="python")
    np.testing.assert_array_equal(a.lengths, b.lengths)
    assert a.returns.tobytes() == b.returns.tobytes()
    assert a.h.tobytes() == b.h.tobytes()


@needs_cython
def test_backends_train_identically(suite_case):
    _, spec, phi = suite_case
    fam = PolicyFamily.softmax(spec, 0.05, 2.0)
    a = train(spec, phi, fam, StepSchedule(), 300, 6, backend="cython")
    b = train(spec, phi, fam, StepSchedule(), 300, 6, backend="python")
    assert a.theta.tobytes() == b.theta.tobytes()


@needs_cython
def test_backends_agree_on_the_cap():
    spec = instances.discounted_self_loop(0.999)
    phi = FeatureMatrix.tabular(spec)
    pi = PolicyTable.uniform(1, 2)
    for backend in ("cython", "python"):
        with pytest.raises(EpisodeCapExceeded):
            sample_episodes(spec, phi, pi, np.zeros(2), 200, 0, backend=backend, cap=5)
