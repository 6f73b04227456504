"""Runtime networks built from an :class:`~charbench.arch.ArchSpec`.

Parameters live in a :class:`ParamStore` keyed ``<layer>.<weight|bias|gamma|beta>``;
layers look their tensors up by name on every call, so loading a weight file or
swapping the head never leaves a stale reference behind.
"""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .arch import (
    ArchError,
    ArchSpec,
    LayerSpec,
    expand,
    head_layer_name,
    infer_shapes,
    layer_param_shapes,
    leaf_layers,
    with_num_classes,
)
from .autodiff import RunningStats, Tensor

FIXED_EXTRACTOR = "fixed_extractor"
FULL_FINETUNE = "full_finetune"
FREEZE_POLICIES = (FIXED_EXTRACTOR, FULL_FINETUNE)


@dataclass
class Param:
    tensor: Tensor
    frozen: bool = False
    region: str = "features"  # or "classifier"


class ParamStore:
    """Named parameters with freeze flags, plus batchnorm running buffers."""

    def __init__(self):
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, RunningStats] = {}

    def add(self, name: str, value: np.ndarray, region: str) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        self.params[name] = Param(Tensor(value, requires_grad=True), False, region)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def trainable(self) -> dict[str, Tensor]:
        return {k: p.tensor for k, p in self.params.items() if not p.frozen}

    def frozen_names(self) -> list[str]:
        return [k for k, p in self.params.items() if p.frozen]

    def region_names(self, region: str) -> list[str]:
        return [k for k, p in self.params.items() if p.region == region]

    def set_frozen(self, name: str, frozen: bool) -> None:
        p = self.params[name]
        p.frozen = frozen
        p.tensor.requires_grad = not frozen

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.tensor.grad = None

    def entries(self):
        """(name, array) pairs in file order: parameters, then running buffers."""
        for name, p in self.params.items():
            yield name, p.tensor.data
        for name, stats in self.buffers.items():
            yield f"{name}.running_mean", stats.mean
            yield f"{name}.running_var", stats.var

    def digest(self, names=None) -> str:
        h = hashlib.sha256()
        for name, arr in self.entries():
            if names is not None and name not in names:
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def region_digest(self, region: str) -> str:
        """Hash of a region's parameters and the buffers of its batchnorm layers."""
        names = set(self.region_names(region))
        layers = {n.rsplit(".", 1)[0] for n in names}
        for layer in self.buffers:
            if layer in layers:
                names |= {f"{layer}.running_mean", f"{layer}.running_var"}
        return self.digest(names)


# ---------------------------------------------------------------------------
# runtime layers


class _Ctx:
    """Per-forward state: train flag, dropout generator, store."""

    def __init__(self, store: ParamStore, train: bool, rng):
        self.store = store
        self.train = train
        self.rng = rng


def _run_leaf(layer: LayerSpec, x: Tensor, ctx: _Ctx) -> Tensor:
    hp, kind, s = layer.hp, layer.kind, ctx.store
    if kind == "conv":
        bias = s[f"{layer.name}.bias"] if hp.get("bias", True) else None
        return ad.conv2d(x, s[f"{layer.name}.weight"], bias, hp["stride"], hp["pad"])
    if kind == "linear":
        return ad.linear(x, s[f"{layer.name}.weight"], s[f"{layer.name}.bias"])
    if kind == "relu":
        return ad.relu(x)
    if kind == "maxpool":
        return ad.maxpool2d(x, hp["kernel"], hp["stride"], hp.get("pad", 0))
    if kind == "avgpool":
        return ad.avgpool2d(x, hp["kernel"], hp["stride"], hp.get("pad", 0))
    if kind == "adaptive_avgpool":
        return ad.adaptive_avgpool2d(x, hp["out"])
    if kind == "flatten":
        return ad.flatten(x)
    if kind == "dropout":
        return ad.dropout(x, hp["p"], ctx.train, ctx.rng)
    if kind == "batchnorm":
        gamma = s.params[f"{layer.name}.gamma"]
        # frozen batchnorm stays on its running statistics
        train = ctx.train and not gamma.frozen
        return ad.batchnorm2d(x, gamma.tensor, s[f"{layer.name}.beta"], s.buffers[layer.name],
                              train, momentum=0.1, eps=hp.get("eps", 1e-5))
    raise ArchError(f"layer {layer.name!r}: cannot execute kind {kind!r}")


def run_layers(layers, x: Tensor, ctx: _Ctx) -> Tensor:
    for layer in layers:
        if layer.kind == "dense_block":
            feats = x
            for unit in expand(layer):
                feats = ad.concat_channels([feats, run_layers(unit, feats, ctx)])
            x = feats
        elif layer.kind == "transition":
            x = run_layers(expand(layer), x, ctx)
        elif layer.kind in ("concat_block", "inception_block"):
            x = ad.concat_channels([run_layers(b, x, ctx) for b in expand(layer)])
        else:
            x = _run_leaf(layer, x, ctx)
    return x


class Network:
    """Forward evaluator for an ArchSpec bound to a ParamStore."""

    def __init__(self, spec: ArchSpec, store: ParamStore):
        self.spec = spec
        self.store = store
        self.training = False
        self.rng = np.random.default_rng(0)

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    def _ctx(self) -> _Ctx:
        return _Ctx(self.store, self.training, self.rng)

    def features(self, x: Tensor) -> Tensor:
        return run_layers(self.spec.feature_layers, x, self._ctx())

    def classify(self, feats: Tensor) -> Tensor:
        return run_layers(self.spec.classifier_layers, feats, self._ctx())

    def __call__(self, x: Tensor) -> Tensor:
        ctx = self._ctx()
        return run_layers(self.spec.classifier_layers,
                          run_layers(self.spec.feature_layers, x, ctx), ctx)

    def features_frozen(self) -> bool:
        """True when every feature parameter is frozen (features are a pure function of input)."""
        return all(p.frozen for p in self.store.params.values() if p.region == "features")


# ---------------------------------------------------------------------------
# construction


def kaiming_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / fan_in)
    return (rng.random(shape, dtype=np.float32) * np.float32(2 * bound) - np.float32(bound))


def _init_layer(store: ParamStore, layer: LayerSpec, region: str, rng) -> None:
    for suffix, shape in layer_param_shapes(layer).items():
        name = f"{layer.name}.{suffix}"
        if suffix == "weight":
            value = kaiming_uniform(rng, shape)
        elif suffix == "gamma":
            value = np.ones(shape, np.float32)
        else:
            value = np.zeros(shape, np.float32)
        store.add(name, value, region)
    if layer.kind == "batchnorm":
        store.buffers[layer.name] = RunningStats(layer.hp["channels"])


def build(spec: ArchSpec, init_seed: int = 0) -> tuple[Network, ParamStore]:
    """Instantiate ``spec`` with deterministic Kaiming-uniform weights."""
    infer_shapes(spec)
    rng = np.random.default_rng(init_seed)
    store = ParamStore()
    for region, layers in (("features", spec.feature_layers), ("classifier", spec.classifier_layers)):
        for layer in leaf_layers(layers):
            _init_layer(store, layer, region, rng)
    return Network(spec, store), store


def replace_head(network: Network, store: ParamStore, num_classes: int, init_seed: int = 0) -> None:
    """Swap the final linear layer for a fresh, trainable ``num_classes``-way layer."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    new_spec = with_num_classes(network.spec, num_classes)
    infer_shapes(new_spec)
    name = head_layer_name(new_spec)
    layer = next(l for l in new_spec.classifier_layers if l.name == name)
    for suffix in ("weight", "bias"):
        store.params.pop(f"{name}.{suffix}", None)
    _init_layer(store, layer, "classifier", np.random.default_rng(init_seed))
    network.spec = new_spec


def set_freeze_policy(store: ParamStore, policy: str) -> None:
    if policy not in FREEZE_POLICIES:
        raise ValueError(f"unknown freeze policy {policy!r}")
    for name, p in store.params.items():
        store.set_frozen(name, policy == FIXED_EXTRACTOR and p.region != "classifier")


# ---------------------------------------------------------------------------
# parameter files
#
# "CBPW" | version u16 | count u32 | entries | crc32 u32
# entry: name_len u16 | name utf-8 | dtype u8 (0 = float32) | rank u8 | dims u32*rank | data


MAGIC = b"CBPW"
VERSION = 1
_DTYPES = {0: np.dtype("<f4")}


class ParamFileError(ValueError):
    pass


def encode_params(store: ParamStore) -> bytes:
    entries = list(store.entries())
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", 0, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_params(store: ParamStore, path) -> None:
    Path(path).write_bytes(encode_params(store))


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise ParamFileError("bad magic: not a parameter file")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise ParamFileError("checksum mismatch: file is truncated or corrupt")
    version, count = struct.unpack_from("<HI", payload, 4)
    if version != VERSION:
        raise ParamFileError(f"unsupported version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", payload, off)
            off += 2
            name = payload[off : off + nlen].decode("utf-8")
            off += nlen
            tag, rank = struct.unpack_from("<BB", payload, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", payload, off)
            off += 4 * rank
            dtype = _DTYPES[tag]
            nbytes = int(np.prod(dims)) * dtype.itemsize
            if off + nbytes > len(payload):
                raise ParamFileError(f"entry {name!r} runs past end of file")
            out[name] = np.frombuffer(payload, dtype, int(np.prod(dims)), off).reshape(dims).astype(np.float32)
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ParamFileError(f"malformed parameter file: {exc}") from exc
    if off != len(payload):
        raise ParamFileError("trailing bytes after last entry")
    return out


def read_params(path) -> dict[str, np.ndarray]:
    return decode_params(Path(path).read_bytes())


def assign_params(store: ParamStore, values: dict[str, np.ndarray]) -> None:
    """Copy ``values`` into ``store``; validates everything before touching the store."""
    current = dict(store.entries())
    for name, arr in current.items():
        if name not in values:
            raise ParamFileError(f"missing parameter {name!r} in file")
        if values[name].shape != arr.shape:
            raise ParamFileError(
                f"shape mismatch for {name!r}: file {values[name].shape}, model {arr.shape}"
            )
    extra = [n for n in values if n not in current]
    if extra:
        raise ParamFileError(f"unexpected parameter {extra[0]!r} in file")
    for name, p in store.params.items():
        p.tensor.data = values[name].copy()
    for layer, stats in store.buffers.items():
        stats.mean[...] = values[f"{layer}.running_mean"]
        stats.var[...] = values[f"{layer}.running_var"]


def load_params(path, store: ParamStore) -> None:
    assign_params(store, read_params(path))


def head_width_in_file(values: dict[str, np.ndarray], spec: ArchSpec) -> int:
    name = f"{head_layer_name(spec)}.weight"
    if name not in values:
        raise ParamFileError(f"missing parameter {name!r} in file")
    return int(values[name].shape[0])
