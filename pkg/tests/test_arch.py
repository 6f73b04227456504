import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charbench import autodiff as ad
from charbench.arch import (
    MODEL_IDS,
    ArchError,
    ArchSpec,
    LayerSpec,
    canonical_model_id,
    classifier_in_features,
    final_hidden_width,
    infer_layer,
    param_count,
    zoo_spec,
)
from charbench.network import (
    FIXED_EXTRACTOR,
    FULL_FINETUNE,
    ParamFileError,
    build,
    encode_params,
    load_params,
    replace_head,
    save_params,
    set_freeze_policy,
)
from charbench.train import OptimizerState, sgd_step


@pytest.mark.parametrize("model, expected", [
    ("alexnet", 9216), ("vgg16", 25088), ("vgg19", 25088),
    ("densenet121", 1024), ("densenet201", 1920), ("inception_v3", 2048),
])
def test_full_in_features_match_reference(model, expected):
    assert classifier_in_features(zoo_spec(model, "full", 1000)) == expected


def test_alexnet_in_features_is_256_6_6():
    assert classifier_in_features(zoo_spec("alexnet", "full")) == 256 * 6 * 6


def test_vgg_reports_both_cut_points():
    spec = zoo_spec("vgg11", "full", 1000)
    assert classifier_in_features(spec) == 25088
    assert final_hidden_width(spec) == 4096


@pytest.mark.parametrize("model, reference", [
    ("alexnet", 60e6), ("vgg11", 134e6), ("vgg16", 138e6), ("vgg19", 144e6),
])
def test_full_param_counts_within_5_percent(model, reference):
    count = param_count(zoo_spec(model, "full", 1000))
    assert abs(count - reference) <= 0.05 * reference


def test_torchvision_reference_counts():
    # counts of the reference ImageNet implementations these specs mirror
    assert param_count(zoo_spec("alexnet", "full", 1000)) == 61_100_840
    assert param_count(zoo_spec("vgg16", "full", 1000)) == 138_357_544
    assert param_count(zoo_spec("densenet121", "full", 1000)) == 7_978_856


def test_param_count_single_linear():
    spec = ArchSpec("alexnet", "mini", (2, 2), [LayerSpec("flatten", "flat")],
                    [LayerSpec("linear", "fc", dict(in_features=4, out_features=3))], 3,
                    in_channels=1)
    assert param_count(spec) == 15


def test_zoo_structure_alexnet():
    spec = zoo_spec("alexnet", "full")
    kinds = [l.kind for l in spec.feature_layers]
    assert kinds.count("conv") == 5 and kinds.count("maxpool") == 3
    assert [l.kind for l in spec.classifier_layers].count("linear") == 3


def test_zoo_vgg_uses_3x3_only():
    for model in ("vgg11", "vgg16", "vgg19"):
        convs = [l for l in zoo_spec(model, "full").feature_layers if l.kind == "conv"]
        assert {l.hp["kernel"] for l in convs} == {(3, 3)}
        assert len(convs) == {"vgg11": 8, "vgg16": 13, "vgg19": 16}[model]


def test_zoo_inception_uses_factorized_kernels():
    from charbench.arch import leaf_layers

    spec = zoo_spec("inception_v3", "full")
    kernels = {l.hp["kernel"] for l in leaf_layers(spec.feature_layers) if l.kind == "conv"}
    assert {(3, 3), (3, 1), (1, 3), (1, 1)} <= kernels
    assert spec.input_size == (299, 299)


def test_unknown_model():
    with pytest.raises(KeyError):
        zoo_spec("resnet50", "full")


def test_table_spellings_accepted():
    assert canonical_model_id("densenet_121") == "densenet121"
    assert canonical_model_id("vgg_16") == "vgg16"
    assert canonical_model_id("inception_v3") == "inception_v3"


@pytest.mark.parametrize("model", MODEL_IDS)
def test_mini_in_features_match_forward(model):
    spec = zoo_spec(model, "mini", 5)
    net, _ = build(spec, 0)
    feats = net.features(ad.Tensor(np.zeros((1, 3, 64, 64), np.float32)))
    assert feats.shape == (1, classifier_in_features(spec))
    assert net(ad.Tensor(np.zeros((2, 3, 64, 64), np.float32))).shape == (2, 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(1, 8), st.integers(1, 4))
def test_dense_block_channel_arithmetic(in_ch, layers, growth, bn_size):
    block = LayerSpec("dense_block", "blk", dict(in_ch=in_ch, num_layers=layers,
                                                  growth_rate=growth, bn_size=bn_size))
    assert infer_layer(block, (in_ch, 4, 4)) == (in_ch + layers * growth, 4, 4)


def test_dense_block_forward_channels():
    spec = zoo_spec("densenet121", "mini", 3)
    net, _ = build(spec, 0)
    from charbench.network import run_layers, _Ctx

    block = next(l for l in spec.feature_layers if l.kind == "dense_block")
    x = ad.Tensor(np.ones((1, block.hp["in_ch"], 5, 5), np.float32))
    y = run_layers([block], x, _Ctx(net.store, False, None))
    assert y.shape[1] == block.hp["in_ch"] + block.hp["num_layers"] * block.hp["growth_rate"]
    # the block input survives unchanged in the leading channels
    np.testing.assert_array_equal(y.data[:, : block.hp["in_ch"]], x.data)


def test_build_deterministic_full_alexnet():
    spec = zoo_spec("alexnet", "full", 1000)
    _, a = build(spec, 7)
    da = a.digest()
    del a
    _, b = build(spec, 7)
    assert da == b.digest()


def test_build_seed_changes_weights():
    spec = zoo_spec("alexnet", "mini", 4)
    assert build(spec, 1)[1].digest() != build(spec, 2)[1].digest()


def test_vgg11_mini_forward_46_logits():
    net, _ = build(zoo_spec("vgg11", "mini", 46), 0)
    assert net(ad.Tensor(np.zeros((1, 3, 64, 64), np.float32))).shape == (1, 46)


def test_inconsistent_conv_names_layer():
    spec = zoo_spec("vgg11", "mini", 10)
    bad = list(spec.feature_layers)
    conv2 = next(i for i, l in enumerate(bad) if l.name == "features.conv2")
    bad[conv2] = LayerSpec("conv", "features.conv2", dict(bad[conv2].hp, in_ch=99))
    with pytest.raises(ArchError, match="features.conv2"):
        build(ArchSpec("vgg11", "mini", (64, 64), bad, spec.classifier_layers, 10), 0)


def test_duplicate_layer_names_rejected():
    with pytest.raises(ArchError, match="duplicate"):
        ArchSpec("alexnet", "mini", (2, 2), [LayerSpec("relu", "a"), LayerSpec("relu", "a")], [], 2)


def test_every_parameter_appears_once():
    from charbench.arch import layer_param_shapes, leaf_layers

    spec = zoo_spec("inception_v3", "mini", 10)
    _, store = build(spec, 0)
    expected = [f"{l.name}.{s}" for l in leaf_layers(spec.feature_layers + spec.classifier_layers)
                for s in layer_param_shapes(l)]
    assert len(expected) == len(set(expected)) == len(store)
    assert set(expected) == set(store.params)
    assert sum(p.tensor.size for p in store.params.values()) == param_count(spec)


# ---------------------------------------------------------------------------
# head replacement and freezing


def test_replace_head():
    net, store = build(zoo_spec("alexnet", "mini", 20), 0)
    before = {k: p.tensor.data.copy() for k, p in store.params.items() if p.region == "features"}
    set_freeze_policy(store, FIXED_EXTRACTOR)
    replace_head(net, store, 46, init_seed=3)
    assert net(ad.Tensor(np.zeros((1, 3, 64, 64), np.float32))).shape == (1, 46)
    assert not store.params["classifier.fc3.weight"].frozen
    for k, v in before.items():
        assert store[k].data.tobytes() == v.tobytes()
        assert store.params[k].frozen


def test_replace_head_deterministic():
    def head(seed):
        net, store = build(zoo_spec("alexnet", "mini", 20), 0)
        replace_head(net, store, 46, init_seed=seed)
        return store["classifier.fc3.weight"].data.tobytes()

    assert head(5) == head(5)


def test_fixed_extractor_on_vgg11():
    _, store = build(zoo_spec("vgg11", "mini", 10), 0)
    set_freeze_policy(store, FIXED_EXTRACTOR)
    conv_params = [k for k in store.params if ".conv" in k]
    assert conv_params and all(store.params[k].frozen for k in conv_params)
    assert set(store.trainable()) == set(store.region_names("classifier"))


@pytest.mark.parametrize("model", MODEL_IDS)
def test_fixed_extractor_trainable_equals_classifier(model):
    _, store = build(zoo_spec(model, "mini", 10), 0)
    set_freeze_policy(store, FIXED_EXTRACTOR)
    assert set(store.trainable()) == set(store.region_names("classifier"))
    set_freeze_policy(store, FULL_FINETUNE)
    assert store.frozen_names() == []


def test_frozen_values_survive_100_steps():
    net, store = build(zoo_spec("densenet121", "mini", 4), 0)
    set_freeze_policy(store, FIXED_EXTRACTOR)
    frozen = store.region_digest("features")
    head = store.region_digest("classifier")
    state = OptimizerState()
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.standard_normal((4, 3, 64, 64)).astype(np.float32))
    net.train()
    for _ in range(100):
        with ad.Tape() as tape:
            loss = ad.softmax_cross_entropy(net(x), [0, 1, 2, 3])
            tape.backward(loss)
        # frozen tensors get no gradient at all
        assert all(store[k].grad is None for k in store.frozen_names())
        sgd_step(store, state, 0.01, 0.9)
    assert store.region_digest("features") == frozen
    assert store.region_digest("classifier") != head
    assert not set(state.velocity) & set(store.frozen_names())


# ---------------------------------------------------------------------------
# parameter files


def _mini(model="densenet121", classes=5, seed=0):
    return build(zoo_spec(model, "mini", classes), seed)


def test_save_load_roundtrip(tmp_path):
    _, a = _mini(seed=1)
    _, b = _mini(seed=2)
    a.buffers["features.norm0"].mean[:] = np.arange(16)
    save_params(a, tmp_path / "w.cbpw")
    load_params(tmp_path / "w.cbpw", b)
    for (na, va), (nb, vb) in zip(a.entries(), b.entries()):
        assert na == nb and va.tobytes() == vb.tobytes()


def test_file_layout(tmp_path):
    _, store = _mini()
    blob = encode_params(store)
    assert blob[:4] == b"CBPW"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == len(list(store.entries()))
    import zlib

    assert int.from_bytes(blob[-4:], "little") == zlib.crc32(blob[:-4])


def test_load_into_mismatched_arch(tmp_path):
    _, a = _mini("alexnet")
    _, b = _mini("vgg11")
    save_params(a, tmp_path / "w.cbpw")
    first = next(iter(b.params))
    with pytest.raises(ParamFileError, match=first.replace(".", r"\.")):
        load_params(tmp_path / "w.cbpw", b)


def test_load_shape_mismatch(tmp_path):
    _, a = _mini(classes=5)
    _, b = _mini(classes=7)
    save_params(a, tmp_path / "w.cbpw")
    with pytest.raises(ParamFileError, match="shape mismatch for 'classifier.weight'"):
        load_params(tmp_path / "w.cbpw", b)


def test_truncated_file_leaves_store_untouched(tmp_path):
    _, a = _mini(seed=1)
    _, b = _mini(seed=2)
    save_params(a, tmp_path / "w.cbpw")
    blob = (tmp_path / "w.cbpw").read_bytes()
    (tmp_path / "w.cbpw").write_bytes(blob[: len(blob) // 2])
    before = b.digest()
    with pytest.raises(ParamFileError, match="checksum"):
        load_params(tmp_path / "w.cbpw", b)
    assert b.digest() == before


def test_bad_magic(tmp_path):
    (tmp_path / "w.cbpw").write_bytes(b"NOPE" + bytes(20))
    _, b = _mini()
    with pytest.raises(ParamFileError, match="magic"):
        load_params(tmp_path / "w.cbpw", b)


@pytest.mark.parametrize("model", ["alexnet", "densenet121", "inception_v3"])
def test_save_load_forward_bit_exact(tmp_path, model):
    net_a, a = _mini(model, seed=3)
    x = ad.Tensor(np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32))
    ref = net_a(x).data
    save_params(a, tmp_path / "w.cbpw")
    net_b, b = _mini(model, seed=4)
    load_params(tmp_path / "w.cbpw", b)
    assert net_b(x).data.tobytes() == ref.tobytes()
