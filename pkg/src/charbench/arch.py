"""Declarative network descriptions, shape inference and the model zoo.

A network is an :class:`ArchSpec`: an ordered list of feature layers that ends
at the flattened feature vector, followed by the classifier layers. Composite
layers (dense blocks, transitions, inception blocks) expand into primitive
layers, so shape inference, parameter counting and the runtime all walk the
same tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MODEL_IDS = (
    "alexnet",
    "densenet121",
    "densenet201",
    "vgg11",
    "vgg16",
    "vgg19",
    "inception_v3",
)

# report spellings: model names lowercased with underscores
DISPLAY_NAMES = {
    "alexnet": "alexnet",
    "densenet121": "densenet_121",
    "densenet201": "densenet_201",
    "vgg11": "vgg_11",
    "vgg16": "vgg_16",
    "vgg19": "vgg_19",
    "inception_v3": "inception_v3",
}
_ALIASES = {v: k for k, v in DISPLAY_NAMES.items()}
_ALIASES.update({k: k for k in MODEL_IDS})
_ALIASES.update({"inceptionv3": "inception_v3", "inception": "inception_v3"})

LEAF_KINDS = {"conv", "linear", "relu", "maxpool", "avgpool", "adaptive_avgpool",
              "batchnorm", "dropout", "flatten"}
COMPOSITE_KINDS = {"concat_block", "inception_block", "dense_block", "transition"}

_REQUIRED = {
    "conv": ("in_ch", "out_ch", "kernel", "stride", "pad"),
    "linear": ("in_features", "out_features"),
    "maxpool": ("kernel", "stride"),
    "avgpool": ("kernel", "stride"),
    "adaptive_avgpool": ("out",),
    "batchnorm": ("channels",),
    "dropout": ("p",),
    "concat_block": ("branches",),
    "inception_block": ("branches",),
    "dense_block": ("in_ch", "num_layers", "growth_rate", "bn_size"),
    "transition": ("in_ch", "out_ch"),
}


class ArchError(ValueError):
    """Shape inference or spec validation failed; the message names the layer."""


def canonical_model_id(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise KeyError(f"unknown model {name!r}; expected one of {', '.join(DISPLAY_NAMES.values())}")
    return _ALIASES[key]


@dataclass
class LayerSpec:
    kind: str
    name: str
    hp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LEAF_KINDS | COMPOSITE_KINDS:
            raise ArchError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        missing = [k for k in _REQUIRED.get(self.kind, ()) if k not in self.hp]
        if missing:
            raise ArchError(f"layer {self.name!r} ({self.kind}) missing hyperparams {missing}")


@dataclass
class ArchSpec:
    model_id: str
    scale: str
    input_size: tuple
    feature_layers: list
    classifier_layers: list
    num_classes: int
    in_channels: int = 3

    def __post_init__(self):
        names = [l.name for l in self.feature_layers + self.classifier_layers]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ArchError(f"duplicate layer names: {sorted(dup)}")


# ---------------------------------------------------------------------------
# composite expansion


def _conv(name, cin, cout, k, stride=1, pad=0, bias=True) -> LayerSpec:
    k = k if isinstance(k, tuple) else (k, k)
    stride = stride if isinstance(stride, tuple) else (stride, stride)
    pad = pad if isinstance(pad, tuple) else (pad, pad)
    return LayerSpec("conv", name, dict(in_ch=cin, out_ch=cout, kernel=k, stride=stride,
                                        pad=pad, bias=bias))


def _bn(name, ch, eps=1e-5) -> LayerSpec:
    return LayerSpec("batchnorm", name, dict(channels=ch, eps=eps))


def _relu(name) -> LayerSpec:
    return LayerSpec("relu", name)


def dense_unit(name: str, in_ch: int, growth: int, bn_size: int) -> list:
    """BN-ReLU-1x1 bottleneck then BN-ReLU-3x3 producing ``growth`` channels."""
    mid = bn_size * growth
    return [
        _bn(f"{name}.norm1", in_ch),
        _relu(f"{name}.relu1"),
        _conv(f"{name}.conv1", in_ch, mid, 1, bias=False),
        _bn(f"{name}.norm2", mid),
        _relu(f"{name}.relu2"),
        _conv(f"{name}.conv2", mid, growth, 3, pad=1, bias=False),
    ]


def expand(layer: LayerSpec):
    """Children of a composite layer.

    Dense blocks return a list of units (each a layer list whose output is
    concatenated to its input); transitions and concat/inception blocks return
    a layer list or a list of branches respectively.
    """
    hp = layer.hp
    if layer.kind == "dense_block":
        return [
            dense_unit(f"{layer.name}.denselayer{i + 1}",
                       hp["in_ch"] + i * hp["growth_rate"], hp["growth_rate"], hp["bn_size"])
            for i in range(hp["num_layers"])
        ]
    if layer.kind == "transition":
        return [
            _bn(f"{layer.name}.norm", hp["in_ch"]),
            _relu(f"{layer.name}.relu"),
            _conv(f"{layer.name}.conv", hp["in_ch"], hp["out_ch"], 1, bias=False),
            LayerSpec("avgpool", f"{layer.name}.pool", dict(kernel=(2, 2), stride=(2, 2), pad=(0, 0))),
        ]
    if layer.kind in ("concat_block", "inception_block"):
        return hp["branches"]
    raise ArchError(f"layer {layer.name!r} ({layer.kind}) is not composite")


# ---------------------------------------------------------------------------
# shape inference and parameter accounting


def _out(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def infer_layer(layer: LayerSpec, shape: tuple) -> tuple:
    """Output shape of one layer for a per-sample input ``shape`` (C,H,W) or (F,)."""
    hp, kind, name = layer.hp, layer.kind, layer.name

    def need_map():
        if len(shape) != 3:
            raise ArchError(f"layer {name!r} ({kind}) expects a feature map, got shape {shape}")
        return shape

    if kind == "conv":
        c, h, w = need_map()
        if c != hp["in_ch"]:
            raise ArchError(f"layer {name!r}: expects {hp['in_ch']} input channels, got {c}")
        (kh, kw), (sh, sw), (ph, pw) = hp["kernel"], hp["stride"], hp["pad"]
        oh, ow = _out(h, kh, sh, ph), _out(w, kw, sw, pw)
        if oh < 1 or ow < 1:
            raise ArchError(f"layer {name!r}: non-positive output {oh}x{ow} from {h}x{w}")
        return (hp["out_ch"], oh, ow)
    if kind in ("maxpool", "avgpool"):
        c, h, w = need_map()
        (kh, kw), (sh, sw) = hp["kernel"], hp["stride"]
        ph, pw = hp.get("pad", (0, 0))
        oh, ow = _out(h, kh, sh, ph), _out(w, kw, sw, pw)
        if oh < 1 or ow < 1:
            raise ArchError(f"layer {name!r}: non-positive output {oh}x{ow} from {h}x{w}")
        return (c, oh, ow)
    if kind == "adaptive_avgpool":
        c, h, w = need_map()
        oh, ow = hp["out"]
        if oh > h or ow > w:
            raise ArchError(f"layer {name!r}: output {oh}x{ow} larger than input {h}x{w}")
        return (c, oh, ow)
    if kind == "batchnorm":
        c = need_map()[0]
        if c != hp["channels"]:
            raise ArchError(f"layer {name!r}: expects {hp['channels']} channels, got {c}")
        return shape
    if kind in ("relu", "dropout"):
        return shape
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "linear":
        if len(shape) != 1 or shape[0] != hp["in_features"]:
            raise ArchError(f"layer {name!r}: expects {hp['in_features']} input features, got {shape}")
        return (hp["out_features"],)
    if kind == "transition":
        if need_map()[0] != hp["in_ch"]:
            raise ArchError(f"layer {name!r}: expects {hp['in_ch']} input channels, got {shape[0]}")
        return infer_layers(expand(layer), shape)
    if kind == "dense_block":
        if need_map()[0] != hp["in_ch"]:
            raise ArchError(f"layer {name!r}: expects {hp['in_ch']} input channels, got {shape[0]}")
        c, h, w = shape
        for unit in expand(layer):
            new = infer_layers(unit, (c, h, w))
            if new[1:] != (h, w):
                raise ArchError(f"layer {name!r}: dense unit changed spatial size")
            c += new[0]
        return (c, h, w)
    if kind in ("concat_block", "inception_block"):
        need_map()
        outs = [infer_layers(branch, shape) for branch in expand(layer)]
        spatial = {o[1:] for o in outs}
        if len(spatial) != 1:
            raise ArchError(f"layer {name!r}: branch spatial sizes disagree {sorted(spatial)}")
        return (sum(o[0] for o in outs),) + outs[0][1:]
    raise ArchError(f"layer {name!r}: unknown kind {kind!r}")


def infer_layers(layers, shape: tuple) -> tuple:
    for layer in layers:
        shape = infer_layer(layer, shape)
    return shape


def infer_shapes(spec: ArchSpec) -> tuple:
    """(feature output shape, logits shape); raises ArchError on the first bad layer."""
    shape = (spec.in_channels,) + tuple(spec.input_size)
    feat = infer_layers(spec.feature_layers, shape)
    if len(feat) != 1:
        raise ArchError(f"{spec.model_id}: features must end flattened, got {feat}")
    logits = infer_layers(spec.classifier_layers, feat)
    if logits != (spec.num_classes,):
        raise ArchError(f"{spec.model_id}: classifier emits {logits}, expected ({spec.num_classes},)")
    return feat, logits


def leaf_layers(layers):
    """Depth-first iterator over primitive layers (including those inside composites)."""
    for layer in layers:
        if layer.kind in LEAF_KINDS:
            yield layer
        elif layer.kind == "dense_block":
            for unit in expand(layer):
                yield from leaf_layers(unit)
        elif layer.kind == "transition":
            yield from leaf_layers(expand(layer))
        else:
            for branch in expand(layer):
                yield from leaf_layers(branch)


def layer_param_shapes(layer: LayerSpec) -> dict:
    """Trainable parameter shapes of a primitive layer, keyed by suffix."""
    hp = layer.hp
    if layer.kind == "conv":
        kh, kw = hp["kernel"]
        shapes = {"weight": (hp["out_ch"], hp["in_ch"], kh, kw)}
        if hp.get("bias", True):
            shapes["bias"] = (hp["out_ch"],)
        return shapes
    if layer.kind == "linear":
        return {"weight": (hp["out_features"], hp["in_features"]), "bias": (hp["out_features"],)}
    if layer.kind == "batchnorm":
        return {"gamma": (hp["channels"],), "beta": (hp["channels"],)}
    return {}


def param_count(spec: ArchSpec) -> int:
    infer_shapes(spec)
    total = 0
    for layer in leaf_layers(spec.feature_layers + spec.classifier_layers):
        for shp in layer_param_shapes(layer).values():
            total += int(np.prod(shp))
    return total


def classifier_in_features(spec: ArchSpec) -> int:
    return infer_shapes(spec)[0][0]


def final_hidden_width(spec: ArchSpec) -> int:
    """Input width of the last linear layer (the cut some reports use for VGG)."""
    linears = [l for l in spec.classifier_layers if l.kind == "linear"]
    return linears[-1].hp["in_features"]


# ---------------------------------------------------------------------------
# the zoo


def _div(c: int, d: int) -> int:
    return max(1, c // d)


def _alexnet(scale: str, num_classes: int) -> ArchSpec:
    d = 1 if scale == "full" else 4
    w = [_div(c, d) for c in (64, 192, 384, 256, 256)]
    hidden = _div(4096, d)
    if scale == "full":
        conv1, pooled, size = dict(k=11, stride=4, pad=2), (6, 6), (224, 224)
    else:
        # 64x64 input: a gentler stem keeps three 3x3/2 pools from collapsing the map
        conv1, pooled, size = dict(k=5, stride=2, pad=2), (3, 3), (64, 64)
    feats = [
        _conv("features.conv1", 3, w[0], conv1["k"], conv1["stride"], conv1["pad"]),
        _relu("features.relu1"),
        LayerSpec("maxpool", "features.pool1", dict(kernel=(3, 3), stride=(2, 2))),
        _conv("features.conv2", w[0], w[1], 5, pad=2),
        _relu("features.relu2"),
        LayerSpec("maxpool", "features.pool2", dict(kernel=(3, 3), stride=(2, 2))),
        _conv("features.conv3", w[1], w[2], 3, pad=1),
        _relu("features.relu3"),
        _conv("features.conv4", w[2], w[3], 3, pad=1),
        _relu("features.relu4"),
        _conv("features.conv5", w[3], w[4], 3, pad=1),
        _relu("features.relu5"),
        LayerSpec("maxpool", "features.pool5", dict(kernel=(3, 3), stride=(2, 2))),
        LayerSpec("adaptive_avgpool", "avgpool", dict(out=pooled)),
        LayerSpec("flatten", "flatten"),
    ]
    flat = w[4] * pooled[0] * pooled[1]
    head = [
        LayerSpec("dropout", "classifier.drop1", dict(p=0.5)),
        LayerSpec("linear", "classifier.fc1", dict(in_features=flat, out_features=hidden)),
        _relu("classifier.relu1"),
        LayerSpec("dropout", "classifier.drop2", dict(p=0.5)),
        LayerSpec("linear", "classifier.fc2", dict(in_features=hidden, out_features=hidden)),
        _relu("classifier.relu2"),
        LayerSpec("linear", "classifier.fc3", dict(in_features=hidden, out_features=num_classes)),
    ]
    return ArchSpec("alexnet", scale, size, feats, head, num_classes)


VGG_CFGS = {
    "vgg11": (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"),
    "vgg16": (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M",
              512, 512, 512, "M"),
    "vgg19": (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M",
              512, 512, 512, 512, "M"),
}


def _vgg(model_id: str, scale: str, num_classes: int) -> ArchSpec:
    d = 1 if scale == "full" else 4
    pooled = (7, 7) if scale == "full" else (2, 2)
    feats, cin, nconv, npool = [], 3, 0, 0
    for item in VGG_CFGS[model_id]:
        if item == "M":
            npool += 1
            feats.append(LayerSpec("maxpool", f"features.pool{npool}", dict(kernel=(2, 2), stride=(2, 2))))
            continue
        nconv += 1
        cout = _div(item, d)
        feats.append(_conv(f"features.conv{nconv}", cin, cout, 3, pad=1))
        feats.append(_relu(f"features.relu{nconv}"))
        cin = cout
    feats += [LayerSpec("adaptive_avgpool", "avgpool", dict(out=pooled)), LayerSpec("flatten", "flatten")]
    hidden = _div(4096, d)
    flat = cin * pooled[0] * pooled[1]
    head = [
        LayerSpec("linear", "classifier.fc1", dict(in_features=flat, out_features=hidden)),
        _relu("classifier.relu1"),
        LayerSpec("dropout", "classifier.drop1", dict(p=0.5)),
        LayerSpec("linear", "classifier.fc2", dict(in_features=hidden, out_features=hidden)),
        _relu("classifier.relu2"),
        LayerSpec("dropout", "classifier.drop2", dict(p=0.5)),
        LayerSpec("linear", "classifier.fc3", dict(in_features=hidden, out_features=num_classes)),
    ]
    size = (224, 224) if scale == "full" else (64, 64)
    return ArchSpec(model_id, scale, size, feats, head, num_classes)


DENSENET_BLOCKS = {
    ("densenet121", "full"): (6, 12, 24, 16),
    ("densenet201", "full"): (6, 12, 48, 32),
    ("densenet121", "mini"): (2, 4, 8, 4),
    ("densenet201", "mini"): (2, 4, 12, 8),
}


def _densenet(model_id: str, scale: str, num_classes: int) -> ArchSpec:
    blocks = DENSENET_BLOCKS[(model_id, scale)]
    growth, init = (32, 64) if scale == "full" else (8, 16)
    bn_size = 4
    feats = [
        _conv("features.conv0", 3, init, 7, stride=2, pad=3, bias=False),
        _bn("features.norm0", init),
        _relu("features.relu0"),
        LayerSpec("maxpool", "features.pool0", dict(kernel=(3, 3), stride=(2, 2), pad=(1, 1))),
    ]
    c = init
    for i, n in enumerate(blocks):
        feats.append(LayerSpec("dense_block", f"features.denseblock{i + 1}",
                               dict(in_ch=c, num_layers=n, growth_rate=growth, bn_size=bn_size)))
        c += n * growth
        if i != len(blocks) - 1:
            feats.append(LayerSpec("transition", f"features.transition{i + 1}",
                                   dict(in_ch=c, out_ch=c // 2)))
            c //= 2
    feats += [
        _bn("features.norm5", c),
        _relu("features.relu5"),
        LayerSpec("adaptive_avgpool", "avgpool", dict(out=(1, 1))),
        LayerSpec("flatten", "flatten"),
    ]
    head = [LayerSpec("linear", "classifier", dict(in_features=c, out_features=num_classes))]
    size = (224, 224) if scale == "full" else (64, 64)
    return ArchSpec(model_id, scale, size, feats, head, num_classes)


class _Inception:
    """Builds inception v3 layer specs at a given width divisor."""

    def __init__(self, d: int):
        self.d = d

    def w(self, c):
        return _div(c, self.d)

    def basic(self, name, cin, cout, k, stride=1, pad=0):
        """conv (no bias) + batchnorm + relu; returns (layers, cout)."""
        cout = self.w(cout)
        return [
            _conv(f"{name}.conv", cin, cout, k, stride, pad, bias=False),
            _bn(f"{name}.bn", cout, eps=1e-3),
            _relu(f"{name}.relu"),
        ], cout

    def chain(self, name, cin, steps):
        layers = []
        for i, (cout, k, stride, pad) in enumerate(steps):
            part, cin = self.basic(f"{name}_{i + 1}", cin, cout, k, stride, pad)
            layers += part
        return layers, cin

    def block_a(self, name, cin, pool_features):
        b1, c1 = self.basic(f"{name}.branch1x1", cin, 64, 1)
        b5, c5 = self.chain(f"{name}.branch5x5", cin, [(48, 1, 1, 0), (64, 5, 1, 2)])
        b3, c3 = self.chain(f"{name}.branch3x3dbl", cin,
                            [(64, 1, 1, 0), (96, 3, 1, 1), (96, 3, 1, 1)])
        pool = LayerSpec("avgpool", f"{name}.branch_pool.avg",
                         dict(kernel=(3, 3), stride=(1, 1), pad=(1, 1)))
        bp, cp = self.basic(f"{name}.branch_pool", cin, pool_features, 1)
        spec = LayerSpec("inception_block", name, dict(branches=[b1, b5, b3, [pool] + bp], variant="A"))
        return spec, c1 + c5 + c3 + cp

    def block_b(self, name, cin):
        b3, c3 = self.basic(f"{name}.branch3x3", cin, 384, 3, stride=2)
        bd, cd = self.chain(f"{name}.branch3x3dbl", cin,
                            [(64, 1, 1, 0), (96, 3, 1, 1), (96, 3, 2, 0)])
        pool = LayerSpec("maxpool", f"{name}.branch_pool", dict(kernel=(3, 3), stride=(2, 2)))
        spec = LayerSpec("inception_block", name, dict(branches=[b3, bd, [pool]], variant="B"))
        return spec, c3 + cd + cin

    def block_c(self, name, cin, c7):
        b1, c1 = self.basic(f"{name}.branch1x1", cin, 192, 1)
        b7, co7 = self.chain(f"{name}.branch7x7", cin,
                             [(c7, 1, 1, 0), (c7, (1, 7), 1, (0, 3)), (192, (7, 1), 1, (3, 0))])
        bd, cd = self.chain(f"{name}.branch7x7dbl", cin,
                            [(c7, 1, 1, 0), (c7, (7, 1), 1, (3, 0)), (c7, (1, 7), 1, (0, 3)),
                             (c7, (7, 1), 1, (3, 0)), (192, (1, 7), 1, (0, 3))])
        pool = LayerSpec("avgpool", f"{name}.branch_pool.avg",
                         dict(kernel=(3, 3), stride=(1, 1), pad=(1, 1)))
        bp, cp = self.basic(f"{name}.branch_pool", cin, 192, 1)
        spec = LayerSpec("inception_block", name, dict(branches=[b1, b7, bd, [pool] + bp], variant="C"))
        return spec, c1 + co7 + cd + cp

    def block_d(self, name, cin):
        b3, c3 = self.chain(f"{name}.branch3x3", cin, [(192, 1, 1, 0), (320, 3, 2, 0)])
        b7, c7 = self.chain(f"{name}.branch7x7x3", cin,
                            [(192, 1, 1, 0), (192, (1, 7), 1, (0, 3)), (192, (7, 1), 1, (3, 0)),
                             (192, 3, 2, 0)])
        pool = LayerSpec("maxpool", f"{name}.branch_pool", dict(kernel=(3, 3), stride=(2, 2)))
        spec = LayerSpec("inception_block", name, dict(branches=[b3, b7, [pool]], variant="D"))
        return spec, c3 + c7 + cin

    def _split_3x3(self, name, cin):
        """1x3 and 3x1 branches applied to the same input and concatenated."""
        a, ca = self.basic(f"{name}a", cin, 384, (1, 3), pad=(0, 1))
        b, cb = self.basic(f"{name}b", cin, 384, (3, 1), pad=(1, 0))
        return LayerSpec("concat_block", f"{name}.split", dict(branches=[a, b])), ca + cb

    def block_e(self, name, cin):
        b1, c1 = self.basic(f"{name}.branch1x1", cin, 320, 1)
        b3, c3 = self.basic(f"{name}.branch3x3_1", cin, 384, 1)
        s3, cs3 = self._split_3x3(f"{name}.branch3x3_2", c3)
        bd, cd = self.chain(f"{name}.branch3x3dbl", cin, [(448, 1, 1, 0), (384, 3, 1, 1)])
        sd, csd = self._split_3x3(f"{name}.branch3x3dbl_3", cd)
        pool = LayerSpec("avgpool", f"{name}.branch_pool.avg",
                         dict(kernel=(3, 3), stride=(1, 1), pad=(1, 1)))
        bp, cp = self.basic(f"{name}.branch_pool", cin, 192, 1)
        spec = LayerSpec("inception_block", name,
                         dict(branches=[b1, b3 + [s3], bd + [sd], [pool] + bp], variant="E"))
        return spec, c1 + cs3 + csd + cp


def _inception_v3(scale: str, num_classes: int) -> ArchSpec:
    full = scale == "full"
    b = _Inception(1 if full else 4)
    feats = []
    part, c = b.basic("Conv2d_1a_3x3", 3, 32, 3, stride=2)
    feats += part
    part, c = b.basic("Conv2d_2a_3x3", c, 32, 3)
    feats += part
    part, c = b.basic("Conv2d_2b_3x3", c, 64, 3, pad=1)
    feats += part
    feats.append(LayerSpec("maxpool", "maxpool1", dict(kernel=(3, 3), stride=(2, 2))))
    part, c = b.basic("Conv2d_3b_1x1", c, 80, 1)
    feats += part
    part, c = b.basic("Conv2d_4a_3x3", c, 192, 3)
    feats += part
    if full:
        feats.append(LayerSpec("maxpool", "maxpool2", dict(kernel=(3, 3), stride=(2, 2))))
        plan = [("A", "Mixed_5b", 32), ("A", "Mixed_5c", 64), ("A", "Mixed_5d", 64),
                ("B", "Mixed_6a", None), ("C", "Mixed_6b", 128), ("C", "Mixed_6c", 160),
                ("C", "Mixed_6d", 160), ("C", "Mixed_6e", 192), ("D", "Mixed_7a", None),
                ("E", "Mixed_7b", None), ("E", "Mixed_7c", None)]
    else:
        # 64x64 input: second stem pool dropped so the two stride-2 reductions still fit
        plan = [("A", "Mixed_5b", 32), ("B", "Mixed_6a", None), ("C", "Mixed_6b", 128),
                ("D", "Mixed_7a", None), ("E", "Mixed_7b", None)]
    for variant, name, arg in plan:
        if variant == "A":
            spec, c = b.block_a(name, c, arg)
        elif variant == "C":
            spec, c = b.block_c(name, c, arg)
        else:
            spec, c = getattr(b, f"block_{variant.lower()}")(name, c)
        feats.append(spec)
    feats += [LayerSpec("adaptive_avgpool", "avgpool", dict(out=(1, 1))), LayerSpec("flatten", "flatten")]
    head = [
        LayerSpec("dropout", "dropout", dict(p=0.5)),
        LayerSpec("linear", "fc", dict(in_features=c, out_features=num_classes)),
    ]
    size = (299, 299) if full else (64, 64)
    return ArchSpec("inception_v3", scale, size, feats, head, num_classes)


def zoo_spec(model_id: str, scale: str = "mini", num_classes: int = 46) -> ArchSpec:
    """Spec of one of the seven supported models at ``full`` or ``mini`` scale."""
    model_id = canonical_model_id(model_id)
    if scale not in ("full", "mini"):
        raise ValueError(f"scale must be 'full' or 'mini', got {scale!r}")
    if model_id == "alexnet":
        spec = _alexnet(scale, num_classes)
    elif model_id.startswith("vgg"):
        spec = _vgg(model_id, scale, num_classes)
    elif model_id.startswith("densenet"):
        spec = _densenet(model_id, scale, num_classes)
    else:
        spec = _inception_v3(scale, num_classes)
    infer_shapes(spec)
    return spec


def with_num_classes(spec: ArchSpec, num_classes: int) -> ArchSpec:
    """Copy of ``spec`` whose final linear layer emits ``num_classes`` logits."""
    head = list(spec.classifier_layers)
    last = max(i for i, l in enumerate(head) if l.kind == "linear")
    hp = dict(head[last].hp, out_features=num_classes)
    head[last] = LayerSpec("linear", head[last].name, hp)
    return ArchSpec(spec.model_id, spec.scale, spec.input_size, spec.feature_layers, head,
                    num_classes, spec.in_channels)


def head_layer_name(spec: ArchSpec) -> Optional[str]:
    linears = [l for l in spec.classifier_layers if l.kind == "linear"]
    return linears[-1].name if linears else None
