import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from charbench.arch import ArchSpec, LayerSpec, zoo_spec
from charbench.data import SplitDataset, ingest, split
from charbench.network import (
    FIXED_EXTRACTOR,
    FULL_FINETUNE,
    ParamStore,
    assign_params,
    build,
    decode_params,
    replace_head,
    set_freeze_policy,
)
from charbench.train import (
    OptimizerState,
    TrainConfig,
    TrainingError,
    fit,
    pretrain_source,
    run_epoch,
    sgd_step,
    step_lr,
    transfer,
)


class DictImages:
    """Stand-in for ImageCache: sample paths are keys into a dict of arrays."""

    def __init__(self, arrays):
        self.arrays = arrays

    def get(self, path):
        return self.arrays[path]


def _toy_spec(num_classes=2, bn=True):
    feats = [LayerSpec("conv", "features.conv", dict(in_ch=3, out_ch=4, kernel=(3, 3), stride=(1, 1),
                                                     pad=(1, 1)))]
    if bn:
        feats.append(LayerSpec("batchnorm", "features.bn", dict(channels=4)))
    feats += [LayerSpec("relu", "features.relu"),
              LayerSpec("adaptive_avgpool", "avgpool", dict(out=(1, 1))),
              LayerSpec("flatten", "flatten")]
    head = [LayerSpec("dropout", "classifier.drop", dict(p=0.5)),
            LayerSpec("linear", "classifier.fc", dict(in_features=4, out_features=num_classes))]
    return ArchSpec("toy", "mini", (6, 6), feats, head, num_classes)


def _linear_spec(num_classes=2):
    return ArchSpec("lin", "mini", (2, 2), [LayerSpec("flatten", "flatten")],
                    [LayerSpec("linear", "classifier.fc", dict(in_features=12, out_features=num_classes))],
                    num_classes)


def _toy_data(n_per_class=16, classes=2, size=6, seed=0):
    """Class c images are constant at level c/(classes-1) plus a little noise."""
    rng = np.random.default_rng(seed)
    arrays, samples = {}, []
    for c in range(classes):
        level = 2.0 * c / (classes - 1) - 1.0
        for i in range(n_per_class):
            key = f"{c}/{i}"
            arrays[key] = (level + 0.05 * rng.standard_normal((3, size, size))).astype(np.float32)
            samples.append((key, c))
    return samples, DictImages(arrays)


def _store(value, grad, dtype=np.float64, region="classifier"):
    store = ParamStore()
    store.add("p", np.array([value], dtype), region)
    if grad is not None:
        store["p"].grad = np.array([grad], dtype)
    return store


# ---------------------------------------------------------------------------
# optimizer arithmetic


def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.lr, cfg.momentum, cfg.step_size, cfg.gamma, cfg.epochs) == \
        (32, 0.001, 0.9, 7, 0.1, 15)
    for bad in (dict(lr=0), dict(momentum=1.0), dict(gamma=0), dict(step_size=0), dict(epochs=0),
                dict(freeze_policy="half")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_plain_sgd_step():
    store = _store(1.0, 0.5)
    sgd_step(store, OptimizerState(), lr=0.1, momentum=0.0)
    assert store["p"].data[0] == pytest.approx(0.95, abs=1e-15)
    assert store["p"].grad is None


def test_two_momentum_steps():
    g, lr = 0.3, 0.1
    store, state = _store(0.0, g), OptimizerState()
    sgd_step(store, state, lr, 0.9)
    store["p"].grad = np.array([g])
    sgd_step(store, state, lr, 0.9)
    assert store["p"].data[0] == pytest.approx(-lr * (g + 1.9 * g), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 0.99), st.floats(-2, 2), st.floats(1e-4, 0.1))
def test_velocity_closed_form(k, mu, g, lr):
    store, state = _store(0.0, None), OptimizerState()
    for _ in range(k):
        store["p"].grad = np.array([g])
        sgd_step(store, state, lr, mu)
    expected = -lr * g * sum((1 - mu ** i) / (1 - mu) for i in range(1, k + 1))
    assert abs(store["p"].data[0] - expected) <= 1e-6


def test_frozen_param_untouched_and_has_no_velocity():
    store, state = _store(1.0, 5.0, region="features"), OptimizerState()
    store.add("q", np.array([1.0]), "classifier")
    store["q"].grad = np.array([1.0])
    store.set_frozen("p", True)
    store["p"].grad = np.array([5.0])
    sgd_step(store, state, 0.1, 0.9)
    assert store["p"].data[0] == 1.0
    assert "p" not in state.velocity and "q" in state.velocity


def test_missing_gradient_is_an_error():
    with pytest.raises(TrainingError, match="'p'"):
        sgd_step(_store(1.0, None), OptimizerState(), 0.1, 0.9)


# ---------------------------------------------------------------------------
# schedule


def test_step_lr_examples():
    assert step_lr(0.001, 0, 7, 0.1) == 0.001
    assert step_lr(0.001, 7, 7, 0.1) == pytest.approx(0.0001, rel=1e-12)
    assert step_lr(0.001, 14, 7, 0.1) == pytest.approx(0.00001, rel=1e-12)
    with pytest.raises(ValueError):
        step_lr(0.001, -1, 7, 0.1)


@settings(max_examples=50)
@given(st.floats(1e-6, 1.0), st.integers(0, 100), st.integers(1, 20), st.floats(0.01, 1.0))
def test_step_lr_exact(base, epoch, step, gamma):
    assert step_lr(base, epoch, step, gamma) == base * gamma ** (epoch // step)


# ---------------------------------------------------------------------------
# epoch loop


def test_eval_phase_is_pure():
    samples, images = _toy_data()
    network, params = build(_toy_spec(), 0)
    cfg = TrainConfig(epochs=1, seed=0, freeze_policy=FULL_FINETUNE)
    state = OptimizerState()
    run_epoch(network, params, state, samples, cfg, 0, "train", images)
    before = params.digest()
    velocity = {k: v.copy() for k, v in state.velocity.items()}
    a = run_epoch(network, params, state, samples, cfg, 0, "eval", images)
    b = run_epoch(network, params, state, samples, cfg, 0, "eval", images)
    assert a.accuracy == b.accuracy
    assert params.digest() == before
    assert velocity.keys() == state.velocity.keys()
    assert all(np.array_equal(velocity[k], state.velocity[k]) for k in velocity)


def test_train_updates_running_stats_unless_frozen():
    samples, images = _toy_data()
    cfg = TrainConfig(epochs=1)
    network, params = build(_toy_spec(), 0)
    before = params.region_digest("features")
    run_epoch(network, params, OptimizerState(), samples, cfg, 0, "train", images)
    assert params.region_digest("features") != before

    network, params = build(_toy_spec(), 0)
    set_freeze_policy(params, FIXED_EXTRACTOR)
    before = params.region_digest("features")
    run_epoch(network, params, OptimizerState(), samples, cfg, 0, "train", images)
    assert params.region_digest("features") == before


def test_loss_non_increasing_on_separable_batch():
    samples, images = _toy_data(n_per_class=8, size=2)
    network, params = build(_linear_spec(), 3)
    cfg = TrainConfig(batch_size=len(samples), freeze_policy=FULL_FINETUNE)
    state = OptimizerState()
    losses = [run_epoch(network, params, state, samples, cfg, 0, "train", images).loss
              for _ in range(20)]
    assert all(b <= a + 1e-6 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_constant_logits_accuracy_is_one_over_c():
    samples, images = _toy_data(n_per_class=5, classes=4, size=2)
    network, params = build(_linear_spec(4), 0)
    params["classifier.fc.weight"].data[:] = 0
    res = run_epoch(network, params, OptimizerState(), samples, TrainConfig(), 0, "eval", images)
    assert res.accuracy == pytest.approx(0.25)


def test_shape_error_names_batch():
    samples, _ = _toy_data(n_per_class=4, size=2)
    images = DictImages({k: np.zeros((3, 3, 3), np.float32) for k, _ in samples})
    network, params = build(_linear_spec(), 0)
    with pytest.raises(TrainingError, match="batch 0"):
        run_epoch(network, params, OptimizerState(), samples, TrainConfig(), 0, "train", images)


def test_empty_data_rejected():
    network, params = build(_linear_spec(), 0)
    with pytest.raises(TrainingError):
        run_epoch(network, params, OptimizerState(), [], TrainConfig(), 0, "eval", DictImages({}))


def _toy_split(seed=0):
    samples, images = _toy_data(n_per_class=20, seed=seed)
    return SplitDataset(samples[::2] + samples[1::4], samples[3::4], seed, 0.75, ["a", "b"]), images


def test_fit_fifteen_rows_with_schedule():
    data, images = _toy_split()
    network, params = build(_toy_spec(), 0)
    history = fit(network, params, data, TrainConfig(seed=1, freeze_policy=FULL_FINETUNE), images=images)
    assert [m.epoch for m in history] == list(range(15))
    lrs = [m.lr_used for m in history]
    assert lrs == [step_lr(0.001, e, 7, 0.1) for e in range(15)]
    assert lrs[:7] == [0.001] * 7 and lrs[14] == pytest.approx(1e-5)
    for m in history:
        assert 0 <= m.train_accuracy <= 1 and 0 <= m.valid_accuracy <= 1 and m.wall_seconds >= 0


def test_fit_deterministic():
    data, images = _toy_split()

    def losses():
        network, params = build(_toy_spec(), 0)
        cfg = TrainConfig(epochs=4, seed=2, freeze_policy=FULL_FINETUNE)
        return [m.train_loss for m in fit(network, params, data, cfg, images=images)], params.digest()

    assert losses() == losses()


def test_fit_single_epoch():
    data, images = _toy_split()
    network, params = build(_toy_spec(), 0)
    history = fit(network, params, data, TrainConfig(epochs=1), images=images)
    assert len(history) == 1 and 0 <= history[0].valid_accuracy <= 1


# ---------------------------------------------------------------------------
# pretrain and transfer on real files


@pytest.fixture(scope="module")
def black_white(tmp_path_factory):
    root = tmp_path_factory.mktemp("bw")
    for name, value in (("black", 0), ("white", 255)):
        (root / name).mkdir()
        for i in range(100):
            Image.fromarray(np.full((32, 32), value, np.uint8)).save(root / name / f"{i:03d}.png")
    return split(ingest(root), 0.85, seed=0)


def test_black_white_pretrain_sanity(black_white, tmp_path):
    cfg = TrainConfig(epochs=5, seed=0)
    path, history = pretrain_source("alexnet", black_white, cfg, tmp_path / "bw.cbpw")
    assert max(m.train_accuracy for m in history) >= 0.99
    assert path.exists()


def test_pretrain_same_seed_same_bytes(black_white, tmp_path):
    cfg = TrainConfig(epochs=1, seed=7)
    a, _ = pretrain_source("alexnet", black_white, cfg, tmp_path / "a.cbpw")
    b, _ = pretrain_source("alexnet", black_white, cfg, tmp_path / "b.cbpw")
    assert a.read_bytes() == b.read_bytes()


def test_pretrain_needs_two_classes(black_white, tmp_path):
    one = SplitDataset(black_white.train, black_white.test, 0, 0.85, ["only"])
    with pytest.raises(ValueError):
        pretrain_source("alexnet", one, TrainConfig(epochs=1), tmp_path / "x.cbpw")


def _initial_head_digest(path, seed):
    spec = zoo_spec("alexnet", "mini", 2)
    network, params = build(spec, seed)
    assign_params(params, decode_params(path.read_bytes()))
    replace_head(network, params, 2, seed)
    return params.digest(params.region_names("classifier"))


def test_transfer_freezes_features_and_trains_head(black_white, tmp_path):
    path, _ = pretrain_source("alexnet", black_white, TrainConfig(epochs=1), tmp_path / "w.cbpw")
    result = transfer("alexnet", path, black_white, TrainConfig(epochs=2, seed=3))
    assert len(result.metrics) == 2
    assert result.features_unchanged
    assert result.params.region_digest("features") == result.features_before
    trained_head = result.params.digest(result.params.region_names("classifier"))
    assert trained_head != _initial_head_digest(path, 3)
    assert result.head_before != result.head_after


def test_transfer_rejects_mismatched_file(black_white, tmp_path):
    path, _ = pretrain_source("alexnet", black_white, TrainConfig(epochs=1), tmp_path / "w.cbpw")
    with pytest.raises(Exception, match="missing|shape|unexpected"):
        transfer("vgg11", path, black_white, TrainConfig(epochs=1))
