import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clstream.datasets import make_blob_dataset
from clstream.learner import (
    MASK_VALUE, WIDTHS, NumericalError, Optimizer, TrainBatch, accuracy_on, build_cnn, build_mlp,
    build_network, cross_entropy, evaluate, forward, load_checkpoint, loss_and_grads, mask_logits,
    save_checkpoint, step, train_arrays, train_task,
)
from clstream.oracles import finite_difference_grads, gradients_agree, reference_forward
from clstream.stream import ScenarioSpec, TaskStream


def _tiny_cnn(seed=0, num_classes=4):
    return build_cnn(num_classes, image_shape=(12, 12), channels=(2, 3), fc=4, kernel=3, seed=seed)


def _batch(rng, dim, n_classes, B=6, present=None):
    classes = present if present is not None else range(n_classes)
    y = rng.choice(list(classes), B)
    return TrainBatch(rng.random((B, dim)), y, present)


# --- forward ----------------------------------------------------------------------

def test_forward_matches_reference_mlp():
    rng = np.random.default_rng(0)
    net = build_mlp(7, 5, hidden=(9, 6), seed=3)
    X = rng.random((11, 7))
    np.testing.assert_allclose(forward(net, X), reference_forward(net, X), atol=1e-6, rtol=0)


def test_forward_matches_reference_cnn():
    rng = np.random.default_rng(1)
    for net, dim in ((build_cnn(10, seed=2), 784), (_tiny_cnn(seed=5), 144)):
        X = rng.random((3, dim))
        np.testing.assert_allclose(forward(net, X), reference_forward(net, X), atol=1e-6, rtol=0)


def test_zero_head_gives_equal_logits():
    net = build_mlp(4, 6, seed=0)
    net.params["head.weight"][:] = 0
    net.params["head.bias"][:] = 0
    logits = forward(net, np.random.default_rng(0).random((5, 4)))
    assert logits.shape == (5, 6)
    assert (logits == logits[:, :1]).all()


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(build_mlp(4, 3), np.zeros((2, 5)))


def test_forward_does_not_mutate():
    net = build_mlp(4, 3, seed=1)
    before = net.checksum()
    forward(net, np.ones((2, 4)))
    assert net.checksum() == before


def test_cnn_layout():
    net = build_cnn(10)
    shapes = {k: v.shape for k, v in net.params.items()}
    assert shapes["conv1.weight"] == (10, 1, 5, 5)
    assert shapes["conv2.weight"] == (20, 10, 5, 5)
    assert shapes["fc1.weight"] == (50, 320)
    assert shapes["head.weight"] == (10, 50)


@pytest.mark.parametrize("arch,dim", [("mlp", 32), ("cnn", 784)])
def test_width_strictly_increases_parameter_count(arch, dim):
    counts = [build_network(arch, dim, 10, width=k).num_parameters for k in WIDTHS]
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_width_must_be_supported():
    with pytest.raises(ValueError):
        build_network("mlp", 8, 3, width=3)


def test_init_range():
    net = build_mlp(16, 3, hidden=(25,), seed=0)
    assert np.abs(net.params["fc0.weight"]).max() <= 1 / math.sqrt(16)
    assert np.abs(net.params["head.weight"]).max() <= 1 / math.sqrt(25)


# --- masking and loss -----------------------------------------------------------------

def test_mask_example():
    out = mask_logits(np.array([2.0, -1.0, 0.5]), {0, 2})
    np.testing.assert_array_equal(out, [2.0, MASK_VALUE, 0.5])
    assert MASK_VALUE == -1e9


def test_mask_all_present_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(mask_logits(x, range(4)), x)


def test_mask_empty_rejected():
    with pytest.raises(ValueError):
        mask_logits(np.zeros(3), set())


def test_masked_softmax_is_exactly_zero():
    logits = mask_logits(np.array([[3.0, 40.0, -2.0, 0.1]]), {0, 2})
    _, probs = cross_entropy(logits, np.array([0]))
    assert probs[0, 1] == 0.0 and probs[0, 3] == 0.0


def test_uniform_softmax_loss():
    loss, _ = cross_entropy(np.zeros((1, 2)), np.array([0]))
    assert loss == pytest.approx(math.log(2))


def test_masked_head_rows_are_zero():
    rng = np.random.default_rng(4)
    net = build_mlp(5, 10, seed=1)
    batch = TrainBatch(rng.random((8, 5)), np.full(8, 3))
    _, grads = loss_and_grads(net, batch, masking=True)
    absent = [c for c in range(10) if c != 3]
    assert (grads["head.weight"][absent] == 0).all()
    assert (grads["head.bias"][absent] == 0).all()
    assert np.abs(grads["head.weight"][3]).sum() == 0  # single present class: zero loss gradient


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_is_reported():
    net = build_mlp(3, 2, seed=0)
    net.params["head.bias"][:] = [np.inf, 0]
    with pytest.raises(NumericalError):
        loss_and_grads(net, TrainBatch(np.ones((2, 3)), np.array([0, 1])), masking=False)


def test_batch_targets_must_be_present():
    with pytest.raises(ValueError):
        TrainBatch(np.zeros((2, 3)), np.array([0, 1]), present_classes={0})


# --- gradients vs finite differences ------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("masking", [False, True])
def test_mlp_gradients_match_finite_differences(seed, masking):
    rng = np.random.default_rng(seed)
    dim, N = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=int(rng.integers(0, 3))))
    net = build_mlp(dim, N, hidden=hidden, seed=seed)
    present = set(int(c) for c in rng.choice(N, max(1, N - 1), replace=False))
    batch = _batch(rng, dim, N, present=present)
    _, analytic = loss_and_grads(net, batch, masking)
    numeric = finite_difference_grads(net, batch, masking)
    for name in net.params:
        assert gradients_agree(analytic[name], numeric[name]), name


@pytest.mark.parametrize("masking", [False, True])
def test_cnn_gradients_match_finite_differences(masking):
    rng = np.random.default_rng(21)
    net = _tiny_cnn(seed=2)
    batch = _batch(rng, 144, 4, B=3, present={0, 2, 3})
    _, analytic = loss_and_grads(net, batch, masking)
    numeric = finite_difference_grads(net, batch, masking)
    for name in net.params:
        assert gradients_agree(analytic[name], numeric[name]), name


def test_gradient_tolerance_semantics():
    assert gradients_agree(np.array([1.0]), np.array([1.00005]))
    assert not gradients_agree(np.array([1.0]), np.array([1.001]))
    assert gradients_agree(np.array([1e-9]), np.array([5e-7]))


def test_finite_differences_refuse_large_nets():
    net = build_cnn(10)
    with pytest.raises(ValueError):
        finite_difference_grads(net, TrainBatch(np.zeros((1, 784)), [0]), False)


# --- optimisers ------------------------------------------------------------------------

def _scalar_net(theta):
    net = build_mlp(1, 1, hidden=(), seed=0)
    net.params["head.weight"][:] = theta
    net.params["head.bias"][:] = 0
    return net


def _grads(net, g):
    return {k: np.full_like(v, g) if k == "head.weight" else np.zeros_like(v)
            for k, v in net.params.items()}


def test_sgd_example():
    net = _scalar_net(1.0)
    opt = Optimizer("sgd", 0.1)
    step(opt, net, _grads(net, 0.5))
    assert net.params["head.weight"][0, 0] == pytest.approx(0.95)
    assert opt.buffers == {}


def test_momentum_example():
    net = _scalar_net(0.0)
    opt = Optimizer("sgd_momentum", 1.0, momentum=0.9)
    step(opt, net, _grads(net, 1.0))
    step(opt, net, _grads(net, 1.0))
    assert net.params["head.weight"][0, 0] == pytest.approx(-2.9)


def test_adam_zero_gradient_is_noop():
    net = _scalar_net(0.7)
    opt = Optimizer("adam", 0.001)
    step(opt, net, _grads(net, 0.0))
    assert net.params["head.weight"][0, 0] == 0.7


def test_adam_first_step_is_lr_sized():
    net = _scalar_net(0.0)
    step(Optimizer("adam", 0.01), net, _grads(net, 3.0))
    assert net.params["head.weight"][0, 0] == pytest.approx(-0.01, rel=1e-6)


def test_step_shape_mismatch():
    net = _scalar_net(0.0)
    grads = _grads(net, 1.0)
    grads["head.weight"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        step(Optimizer("sgd", 0.1), net, grads)


def test_step_non_finite():
    net = _scalar_net(0.0)
    with pytest.raises(NumericalError):
        step(Optimizer("sgd", 0.1), net, _grads(net, np.nan))


@pytest.mark.parametrize("kw", [{"kind": "rmsprop"}, {"lr": 0.0}, {"momentum": 1.0}])
def test_optimizer_validation(kw):
    with pytest.raises(ValueError):
        Optimizer(**kw)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sets(st.integers(0, 7), min_size=1, max_size=7))
def test_sgd_leaves_absent_head_rows_untouched(seed, present):
    rng = np.random.default_rng(seed)
    net = build_mlp(4, 8, hidden=(5,), seed=seed)
    before = net.state_dict()
    batch = _batch(rng, 4, 8, B=5, present=sorted(present))
    _, grads = loss_and_grads(net, batch, masking=True)
    step(Optimizer("sgd", 0.5), net, grads)
    absent = [c for c in range(8) if c not in present]
    for k in ("head.weight", "head.bias"):
        assert net.params[k][absent].tobytes() == before[k][absent].tobytes()


# --- training and evaluation ---------------------------------------------------------------

@pytest.fixture(scope="module")
def blob_pair():
    return make_blob_dataset(4, 25, 6, 4.0, seed=0)


def test_step_count_is_ceiling_division(blob_pair):
    train, _ = blob_pair
    net = build_mlp(6, 4, seed=0)
    stats = train_arrays(net, Optimizer("sgd", 0.01), train.features, train.labels, 1, 32, True,
                         np.random.default_rng(0))
    assert len(train) == 100 and stats.steps == 4


def test_zero_epochs_is_noop(blob_pair):
    train, _ = blob_pair
    net = build_mlp(6, 4, seed=0)
    before = net.checksum()
    stats = train_arrays(net, Optimizer("sgd", 0.01), train.features, train.labels, 0, 32, True,
                         np.random.default_rng(0))
    assert stats.steps == 0 and net.checksum() == before


def test_empty_task_rejected():
    with pytest.raises(ValueError):
        train_arrays(build_mlp(2, 2), Optimizer(), np.zeros((0, 2)), np.zeros(0, int), 1, 4, True,
                     np.random.default_rng(0))


def test_single_task_converges():
    train, _ = make_blob_dataset(4, 25, 6, 8.0, seed=0)
    spec = ScenarioSpec(4, 2, 1, seed=0)
    task = next(iter(TaskStream(spec, train)))
    net = build_mlp(6, 4, seed=0)
    train_task(net, Optimizer("sgd", 0.1), task, train, 60, 8, True, np.random.default_rng(0))
    X, y = train.features[task.sample_ids], train.labels[task.sample_ids]
    assert accuracy_on(net, X, y, task.classes) > 0.99


def test_training_is_deterministic(blob_pair):
    train, _ = blob_pair
    sums = []
    for _ in range(2):
        net = build_mlp(6, 4, seed=7)
        train_arrays(net, Optimizer("adam", 0.01), train.features, train.labels, 3, 16, False,
                     np.random.default_rng(42))
        sums.append(net.checksum())
    assert sums[0] == sums[1]


def test_random_net_is_near_chance():
    _, test = make_blob_dataset(10, 10, 16, 4.0, seed=1, test_per_class=300)
    accs = [evaluate(build_mlp(16, 10, seed=s), test)[0] for s in range(10)]
    assert abs(np.mean(accs) - 0.1) <= 0.05


def test_iid_training_on_blobs():
    train, test = make_blob_dataset(10, 200, 32, 4.0, seed=0)
    net = build_mlp(32, 10, seed=0)
    train_arrays(net, Optimizer("adam", 0.001), train.features, train.labels, 20, 64, False,
                 np.random.default_rng(0))
    assert evaluate(net, test)[0] >= 0.95


def test_overall_is_weighted_mean_of_per_class():
    train, test = make_blob_dataset(5, 10, 4, 1.0, seed=3, test_per_class=7)
    test = test.subset(np.arange(len(test) - 4))  # unbalance the last class
    net = build_mlp(4, 5, seed=2)
    overall, per_class = evaluate(net, test)
    weights = np.bincount(test.labels, minlength=5)
    assert overall == pytest.approx(float(np.dot(per_class, weights) / weights.sum()), abs=1e-15)


def test_restricted_evaluation_only_predicts_given_classes(blob_pair):
    _, test = blob_pair
    net = build_mlp(6, 4, seed=0)
    acc, per_class = evaluate(net, test, classes=(1, 3))
    assert np.isnan(per_class[[0, 2]]).all()
    assert 0.0 <= acc <= 1.0


def test_checkpoint_round_trip(tmp_path):
    net = _tiny_cnn(seed=1)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, net, step=np.array(12))
    other = _tiny_cnn(seed=9)
    extra = load_checkpoint(path, other)
    assert other.checksum() == net.checksum()
    assert int(extra["step"]) == 12


def test_copy_is_independent():
    net = build_mlp(3, 2, seed=0)
    clone = net.copy()
    clone.params["head.bias"] += 1
    assert clone.checksum() != net.checksum()
