import math

import numpy as np
import pytest

from clstream.datasets import make_blob_dataset
from clstream.learner import TrainBatch, build_mlp
from clstream.oracles import (
    MonteCarloEstimate, exact_inclusion_probability, finite_difference_grads,
    gumbel_top_k_frequency, mc_class_frequency, mc_kl_estimate, recompute_metrics,
)
from clstream.stream import ScenarioSpec, build_mixture_probs, expected_class_frequency


def test_estimate_needs_enough_trials():
    with pytest.raises(ValueError):
        MonteCarloEstimate(0.5, 0.1, 999)


def test_estimate_standard_error():
    x = np.array([0, 1] * 1000)
    est = MonteCarloEstimate.from_samples(x)
    assert est.mean == 0.5
    assert est.std_error == pytest.approx(x.std(ddof=1) / math.sqrt(2000))


def test_uniform_frequency_oracle():
    est = mc_class_frequency(np.ones(10) / 10, 2, 100_000, np.random.default_rng(0))
    assert all(e.contains(0.2) for e in est)


def test_all_classes_always_drawn():
    est = mc_class_frequency(np.ones(4) / 4, 4, 1000, np.random.default_rng(0))
    assert all(e.mean == 1.0 and e.std_error == 0.0 for e in est)


def test_two_samplers_agree_with_enumeration():
    p = build_mixture_probs(5, 2, seed=3)
    exact = exact_inclusion_probability(p, 3)
    a = mc_class_frequency(p, 3, 40_000, np.random.default_rng(1))
    b = gumbel_top_k_frequency(p, 3, 40_000, np.random.default_rng(2))
    for c in range(5):
        assert a[c].contains(exact[c]) and b[c].contains(exact[c])


def test_enumeration_matches_uniform_formula():
    assert exact_inclusion_probability(np.ones(6) / 6, 2) == pytest.approx(
        [expected_class_frequency(6, 2)] * 6)


def test_kl_estimate_converges():
    spec = ScenarioSpec(10, 2, 1)
    est = mc_kl_estimate(spec, 100_000, np.random.default_rng(0), marginal="exact")
    assert abs(est - math.log(5)) < 0.02


def test_kl_estimate_iid_limit():
    spec = ScenarioSpec(6, 6, 1)
    assert mc_kl_estimate(spec, 2000, np.random.default_rng(0), marginal="exact") == 0.0


def test_kl_estimate_on_blobs():
    train, _ = make_blob_dataset(10, 30, 4, 2.0, seed=0)
    spec = ScenarioSpec(10, 2, 1)
    est = mc_kl_estimate(spec, 100_000, np.random.default_rng(1), dataset=train)
    assert abs(est - math.log(5)) < 0.02


def test_fd_matches_closed_form_softmax_regression():
    rng = np.random.default_rng(0)
    net = build_mlp(3, 4, hidden=(), seed=1)
    X, y = rng.normal(size=(5, 3)), np.array([0, 1, 3, 3, 2])
    logits = X @ net.params["head.weight"].T + net.params["head.bias"]
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    p[np.arange(5), y] -= 1
    numeric = finite_difference_grads(net, TrainBatch(X, y), masking=False)
    np.testing.assert_allclose(numeric["head.weight"], p.T @ X / 5, atol=1e-5, rtol=0)
    np.testing.assert_allclose(numeric["head.bias"], p.mean(0), atol=1e-5, rtol=0)


def test_fd_zero_inputs_zero_first_layer():
    net = build_mlp(4, 3, hidden=(5,), seed=0)
    numeric = finite_difference_grads(net, TrainBatch(np.zeros((3, 4)), [0, 1, 2]), False)
    assert np.abs(numeric["fc0.weight"]).max() < 1e-10


def test_fd_masked_rows_measure_zero():
    rng = np.random.default_rng(3)
    net = build_mlp(4, 5, hidden=(3,), seed=0)
    batch = TrainBatch(rng.random((4, 4)), [1, 3, 1, 3])
    numeric = finite_difference_grads(net, batch, masking=True)
    assert (numeric["head.weight"][[0, 2, 4]] == 0).all()


def test_fd_step_must_be_positive():
    with pytest.raises(ValueError):
        finite_difference_grads(build_mlp(2, 2), TrainBatch(np.zeros((1, 2)), [0]), False, 0.0)


def test_recompute_constant_matrix():
    local, total = recompute_metrics(np.full((5, 4), 0.3), [(0,), (1,), (2,), (3,), (0,)], 4, 1)
    assert local == [0.0] * 4 and total == 0.0


def test_recompute_needs_two_tasks_and_shapes():
    with pytest.raises(ValueError):
        recompute_metrics(np.zeros((1, 3)), [(0,)], 3, 1)
    with pytest.raises(ValueError):
        recompute_metrics(np.zeros((2, 3)), [(0,)], 3, 1)
