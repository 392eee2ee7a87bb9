"""Architecture families and the exact parameter-count model.

An :class:`ArchSpec` describes the topology of a network family (layer kinds,
kernels, strides, residual blocks, input shape and class count) without fixing
the widths. A width configuration is a vector with one positive integer per
prunable layer. :func:`count_params` maps a configuration to the exact total
parameter count using this convention:

* conv / pointwise-conv: ``k_h * k_w * fan_in * fan_out`` (no bias)
* depthwise-conv: ``k_h * k_w * width``
* dense: ``fan_in * fan_out + fan_out``
* normalization: ``2 * width`` (scale and shift)
* projection shortcut (1x1 conv): ``fan_in * fan_out`` plus its normalization
* classifier: ``last_width * num_classes + num_classes``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DomainError, ParseError, SchemaError, StructuralError

ARCH_SCHEMA = "widthscale.arch"
ARCH_SCHEMA_VERSION = 1


class Family(str, Enum):
    FEEDFORWARD = "feedforward-conv"
    RESIDUAL = "residual"
    BOTTLENECK = "inverted-bottleneck"
    DENSE = "dense"


class LayerKind(str, Enum):
    CONV = "conv"
    DEPTHWISE = "depthwise-conv"
    POINTWISE = "pointwise-conv"
    DENSE = "dense"


class ShortcutKind(str, Enum):
    IDENTITY = "identity"
    CONV1X1 = "conv1x1"


CONV_KINDS = (LayerKind.CONV, LayerKind.DEPTHWISE, LayerKind.POINTWISE)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a family.

    The output width of a layer is ``widths[l]`` when it is prunable, the input
    width for depthwise layers, and ``expand * input width`` for expansion
    layers. ``relu`` and ``pool`` describe what follows the (normalized, gated)
    output; ``pool`` is a 2x2 max-pool.
    """

    kind: LayerKind
    kernel: tuple[int, int] | None = None
    stride: int = 1
    norm: bool = True
    block_id: int | None = None
    prunable: bool = True
    expand: int | None = None
    relu: bool = True
    pool: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        is_conv = self.kind in CONV_KINDS
        if is_conv != (self.kernel is not None):
            raise StructuralError(f"{self.kind.value} layer: kernel must be given iff the layer is a convolution")
        if self.kernel is not None and (len(self.kernel) != 2 or min(self.kernel) < 1):
            raise StructuralError(f"bad kernel {self.kernel}")
        if self.kind is LayerKind.POINTWISE and self.kernel != (1, 1):
            raise StructuralError("pointwise-conv layers use a 1x1 kernel")
        if self.stride < 1:
            raise StructuralError("stride must be positive")
        if self.kind is LayerKind.DENSE and (self.stride != 1 or self.pool):
            raise StructuralError("dense layers take no stride or pooling")
        if self.kind is LayerKind.DEPTHWISE:
            if self.prunable or self.expand is not None:
                raise StructuralError("depthwise layers keep their input width")
        elif self.prunable == (self.expand is not None):
            raise StructuralError("a non-depthwise layer is either prunable or an expansion layer")
        if self.expand is not None and self.expand < 1:
            raise StructuralError("expansion must be a positive integer")


@dataclass(frozen=True)
class ArchSpec:
    """Immutable description of an architecture family.

    ``default_widths`` holds the conventional configuration the family is
    usually instantiated with; it anchors uniform scaling.
    """

    name: str
    family: Family
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    num_classes: int
    default_widths: tuple[int, ...]
    expansion_factor: int | None = None
    blocks: tuple[tuple[int, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "default_widths", tuple(int(w) for w in self.default_widths))
        if not self.layers:
            raise StructuralError("an architecture needs at least one layer")
        if self.num_classes < 1:
            raise StructuralError("num_classes must be positive")
        if min(self.input_shape, default=0) < 1:
            raise StructuralError("input shape entries must be positive")
        dense = self.family is Family.DENSE
        if dense:
            if len(self.input_shape) != 1 or any(l.kind is not LayerKind.DENSE for l in self.layers):
                raise StructuralError("dense family: 1-d input and dense layers only")
        elif len(self.input_shape) != 3 or any(l.kind is LayerKind.DENSE for l in self.layers):
            raise StructuralError("conv families: (channels, height, width) input and conv layers only")
        if (self.expansion_factor is not None) != (self.family is Family.BOTTLENECK):
            raise StructuralError("expansion_factor is given iff the family is inverted-bottleneck")
        for l in self.layers:
            if l.expand is not None and l.expand != self.expansion_factor:
                raise StructuralError("expansion layers must use the family's expansion_factor")
        n_prunable = sum(l.prunable for l in self.layers)
        if n_prunable < 1:
            raise StructuralError("at least one layer must be prunable")
        if len(self.default_widths) != n_prunable or min(self.default_widths) < 1:
            raise StructuralError("default_widths must hold one positive width per prunable layer")
        object.__setattr__(self, "blocks", _find_blocks(self))

    @property
    def num_prunable(self) -> int:
        return len(self.default_widths)

    @property
    def prunable_layers(self) -> list[int]:
        """Layer indices of the prunable layers, in width-vector order."""
        return [i for i, l in enumerate(self.layers) if l.prunable]


def _find_blocks(arch: ArchSpec) -> tuple[tuple[int, int], ...]:
    blocks: list[tuple[int, int]] = []
    seen: set[int] = set()
    i = 0
    layers = arch.layers
    while i < len(layers):
        bid = layers[i].block_id
        if bid is None:
            i += 1
            continue
        if bid in seen:
            raise StructuralError(f"block {bid} is not contiguous")
        seen.add(bid)
        j = i
        while j < len(layers) and layers[j].block_id == bid:
            j += 1
        blocks.append((i, j))
        i = j
    if blocks and arch.family not in (Family.RESIDUAL, Family.BOTTLENECK):
        raise StructuralError("only residual and inverted-bottleneck families have blocks")
    return tuple(blocks)


# A width handle is (coef, index): the width equals coef * widths[index], or
# the constant coef when index is None. Every width in the supported families
# has this form, which makes count_params a quadratic with an easy gradient.
Handle = tuple[int, "int | None"]


@lru_cache(maxsize=64)
def _handles(arch: ArchSpec) -> tuple[tuple[Handle, ...], tuple[Handle, ...]]:
    ins: list[Handle] = []
    outs: list[Handle] = []
    cur: Handle = (arch.input_shape[0], None)
    p = 0
    for layer in arch.layers:
        ins.append(cur)
        if layer.prunable:
            out: Handle = (1, p)
            p += 1
        elif layer.kind is LayerKind.DEPTHWISE:
            out = cur
        else:
            out = (layer.expand * cur[0], cur[1])
        outs.append(out)
        cur = out
    return tuple(ins), tuple(outs)


def _value(h: Handle, widths):
    coef, idx = h
    return coef if idx is None else coef * widths[idx]


def _block_strides(arch: ArchSpec) -> list[int]:
    return [math.prod(arch.layers[i].stride for i in range(a, b)) for a, b in arch.blocks]


def _shortcut_kinds(arch: ArchSpec, widths) -> list[ShortcutKind]:
    ins, outs = _handles(arch)
    kinds = []
    for (a, b), stride in zip(arch.blocks, _block_strides(arch)):
        same = _value(ins[a], widths) == _value(outs[b - 1], widths)
        kinds.append(ShortcutKind.IDENTITY if same and stride == 1 else ShortcutKind.CONV1X1)
    return kinds


def _terms(arch: ArchSpec, shortcuts: Sequence[ShortcutKind]):
    """Yield (k, a, b) meaning ``k * a * b`` (b may be None, meaning 1)."""
    ins, outs = _handles(arch)
    for layer, hin, hout in zip(arch.layers, ins, outs):
        if layer.kind is LayerKind.DENSE:
            yield 1, hin, hout
            yield 1, hout, None
        elif layer.kind is LayerKind.DEPTHWISE:
            yield layer.kernel[0] * layer.kernel[1], hout, None
        else:
            yield layer.kernel[0] * layer.kernel[1], hin, hout
        if layer.norm:
            yield 2, hout, None
    for (a, b), kind in zip(arch.blocks, shortcuts):
        if kind is ShortcutKind.CONV1X1:
            yield 1, ins[a], outs[b - 1]
            if arch.layers[b - 1].norm:
                yield 2, outs[b - 1], None
    last = outs[-1]
    yield arch.num_classes, last, None
    yield arch.num_classes, (1, None), None


def _check_widths(arch: ArchSpec, widths) -> None:
    if len(widths) != arch.num_prunable:
        raise StructuralError(f"expected {arch.num_prunable} widths, got {len(widths)}")


def count_params(arch: ArchSpec, widths: Sequence[int]) -> int:
    """Exact total parameter count of ``arch`` instantiated at ``widths``."""
    _check_widths(arch, widths)
    ws = [int(w) for w in widths]
    if any(int(w) != w for w in widths):
        raise DomainError("widths must be integers; use count_params_real for real widths")
    if min(ws) < 1:
        raise DomainError(f"widths must be >= 1, got {min(ws)}")
    total = 0
    for k, a, b in _terms(arch, _shortcut_kinds(arch, ws)):
        total += k * _value(a, ws) * (1 if b is None else _value(b, ws))
    return total


def round_width(x: float) -> int:
    """Round half away from zero and clamp to 1."""
    return max(1, math.floor(x + 0.5))


def count_params_real(arch: ArchSpec, widths: Sequence[float]) -> float:
    """The same count evaluated on real-valued widths.

    Shortcut kinds are resolved on the rounded widths, so the result equals
    :func:`count_params` whenever the widths are integers.
    """
    _check_widths(arch, widths)
    ws = [float(w) for w in widths]
    shortcuts = _shortcut_kinds(arch, [round_width(w) for w in ws])
    total = 0.0
    for k, a, b in _terms(arch, shortcuts):
        total += k * _value(a, ws) * (1.0 if b is None else _value(b, ws))
    return total


def param_gradient(arch: ArchSpec, widths: Sequence[float]) -> np.ndarray:
    """Analytic gradient of :func:`count_params_real` with respect to each width."""
    _check_widths(arch, widths)
    ws = [float(w) for w in widths]
    shortcuts = _shortcut_kinds(arch, [round_width(w) for w in ws])
    grad = np.zeros(len(ws))
    for k, a, b in _terms(arch, shortcuts):
        bval = 1.0 if b is None else _value(b, ws)
        if a[1] is not None:
            grad[a[1]] += k * a[0] * bval
        if b is not None and b[1] is not None:
            grad[b[1]] += k * b[0] * _value(a, ws)
    return grad


def resolve_shortcuts(arch: ArchSpec, widths: Sequence[int]) -> list[ShortcutKind]:
    """Shortcut kind of every block: identity only for same-width, stride-1 blocks."""
    if arch.family not in (Family.RESIDUAL, Family.BOTTLENECK):
        raise StructuralError(f"{arch.family.value} architectures have no shortcuts")
    _check_widths(arch, widths)
    return _shortcut_kinds(arch, [int(w) for w in widths])


def block_widths(arch: ArchSpec, widths: Sequence[int]) -> list[tuple[int, int, int]]:
    """(input width, output width, stride) of every residual block."""
    ins, outs = _handles(arch)
    return [(_value(ins[a], widths), _value(outs[b - 1], widths), s)
            for (a, b), s in zip(arch.blocks, _block_strides(arch))]


def layer_widths(arch: ArchSpec, widths: Sequence[int]) -> list[tuple[int, int]]:
    """(input width, output width) of every layer, including derived ones."""
    ins, outs = _handles(arch)
    return [(_value(i, widths), _value(o, widths)) for i, o in zip(ins, outs)]


def uniform_widths(arch: ArchSpec, ratio: float) -> tuple[int, ...]:
    """Every default width multiplied by ``ratio``, rounded, clamped to 1."""
    if not ratio > 0:
        raise DomainError(f"ratio must be positive, got {ratio}")
    return tuple(round_width(w * ratio) for w in arch.default_widths)


@dataclass(frozen=True)
class Violation:
    layer: int | None
    message: str


def validate_widths(arch: ArchSpec, widths: Sequence[Any]) -> list[Violation]:
    """List every way ``widths`` fails to be a configuration for ``arch``."""
    report = []
    if len(widths) != arch.num_prunable:
        report.append(Violation(None, f"length {len(widths)} != {arch.num_prunable} prunable layers"))
    for i, w in enumerate(widths):
        if isinstance(w, bool) or not isinstance(w, (int, np.integer)):
            report.append(Violation(i, f"width {w!r} is not an integer"))
        elif w < 1:
            report.append(Violation(i, f"width {w} < 1"))
    return report


def check_widths(arch: ArchSpec, widths: Sequence[Any]) -> tuple[int, ...]:
    """Validate and normalize a width vector, raising on the first problem."""
    report = validate_widths(arch, widths)
    if report:
        v = report[0]
        cls = StructuralError if v.layer is None else DomainError
        raise cls("; ".join(f"layer {x.layer}: {x.message}" if x.layer is not None else x.message
                            for x in report))
    return tuple(int(w) for w in widths)


# ----------------------------------------------------------------------------
# presets

VGG11_CFG = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")


def vgg11(input_shape=(3, 32, 32), num_classes=10) -> ArchSpec:
    layers, widths = [], []
    for item in VGG11_CFG:
        if item == "M":
            layers[-1] = LayerSpec(LayerKind.CONV, (3, 3), pool=True)
        else:
            layers.append(LayerSpec(LayerKind.CONV, (3, 3)))
            widths.append(item)
    return ArchSpec("vgg11", Family.FEEDFORWARD, tuple(layers), input_shape, num_classes, tuple(widths))


def resnet18(input_shape=(3, 64, 64), num_classes=200) -> ArchSpec:
    """CIFAR-style ResNet18: 3x3 stem, four stages of two basic blocks."""
    layers = [LayerSpec(LayerKind.CONV, (3, 3))]
    widths = [64]
    bid = 0
    for stage, planes in enumerate((64, 128, 256, 512)):
        for b in range(2):
            stride = 2 if stage > 0 and b == 0 else 1
            layers.append(LayerSpec(LayerKind.CONV, (3, 3), stride=stride, block_id=bid))
            layers.append(LayerSpec(LayerKind.CONV, (3, 3), block_id=bid, relu=False))
            widths += [planes, planes]
            bid += 1
    return ArchSpec("resnet18", Family.RESIDUAL, tuple(layers), input_shape, num_classes, tuple(widths))


MOBILENETV2_CFG = ((16, 1, 1), (24, 2, 1), (32, 3, 2), (64, 4, 2), (96, 3, 1), (160, 3, 2), (320, 1, 1))


def mobilenetv2(input_shape=(3, 32, 32), num_classes=100, expansion_factor=6) -> ArchSpec:
    """CIFAR-style MobileNetV2.

    Only the stem, the bottleneck (projection) outputs and the 1280-wide head
    are prunable; expansion widths follow ``expansion_factor * block input``.
    """
    layers = [LayerSpec(LayerKind.CONV, (3, 3))]
    widths = [32]
    bid = 0
    for out, n, stride in MOBILENETV2_CFG:
        for i in range(n):
            s = stride if i == 0 else 1
            layers += [
                LayerSpec(LayerKind.POINTWISE, (1, 1), block_id=bid, prunable=False, expand=expansion_factor),
                LayerSpec(LayerKind.DEPTHWISE, (3, 3), stride=s, block_id=bid, prunable=False),
                LayerSpec(LayerKind.POINTWISE, (1, 1), block_id=bid, relu=False),
            ]
            widths.append(out)
            bid += 1
    layers.append(LayerSpec(LayerKind.POINTWISE, (1, 1)))
    widths.append(1280)
    return ArchSpec("mobilenetv2", Family.BOTTLENECK, tuple(layers), input_shape, num_classes,
                    tuple(widths), expansion_factor=expansion_factor)


def mlp(input_dim=32, hidden=(80, 60, 40, 20), num_classes=8, norm=True) -> ArchSpec:
    """Fully connected network; the desk-scale default has 200 gates."""
    layers = tuple(LayerSpec(LayerKind.DENSE, norm=norm) for _ in hidden)
    return ArchSpec("mlp", Family.DENSE, layers, (input_dim,), num_classes, tuple(hidden))


PRESETS = {"vgg11": vgg11, "resnet18": resnet18, "mobilenetv2": mobilenetv2, "mlp": mlp}


def get_preset(name: str, **overrides) -> ArchSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise StructuralError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides)


# ----------------------------------------------------------------------------
# arch spec files

_LAYER_FIELDS = {"kind", "kernel", "stride", "norm", "block_id", "prunable", "expand", "relu", "pool"}
_ARCH_FIELDS = {"schema", "version", "name", "family", "layers", "input_shape", "num_classes",
                "default_widths", "expansion_factor"}
_PRESET_FIELDS = {"schema", "version", "preset", "options"}


def arch_to_dict(arch: ArchSpec) -> dict:
    layers = []
    for l in arch.layers:
        d = {"kind": l.kind.value}
        for name in ("kernel", "stride", "norm", "block_id", "prunable", "expand", "relu", "pool"):
            v = getattr(l, name)
            if name == "kernel" and v is not None:
                v = list(v)
            d[name] = v
        layers.append(d)
    out = {
        "schema": ARCH_SCHEMA, "version": ARCH_SCHEMA_VERSION, "name": arch.name,
        "family": arch.family.value, "layers": layers, "input_shape": list(arch.input_shape),
        "num_classes": arch.num_classes, "default_widths": list(arch.default_widths),
    }
    if arch.expansion_factor is not None:
        out["expansion_factor"] = arch.expansion_factor
    return out


def arch_from_dict(d: dict) -> ArchSpec:
    """Build an ArchSpec from its document form; unknown fields are rejected.

    Two shapes are accepted: a full description, or ``{"preset": name,
    "options": {...}}`` where options are keyword arguments of the preset.
    """
    if not isinstance(d, dict):
        raise ParseError("arch document must be an object")
    if d.get("schema", ARCH_SCHEMA) != ARCH_SCHEMA or d.get("version", ARCH_SCHEMA_VERSION) != ARCH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported arch schema {d.get('schema')!r} v{d.get('version')!r}")
    if "preset" in d:
        unknown = set(d) - _PRESET_FIELDS
        if unknown:
            raise ParseError(f"unknown arch fields: {sorted(unknown)}")
        opts = dict(d.get("options", {}))
        for key in ("input_shape", "hidden"):
            if key in opts:
                opts[key] = tuple(opts[key])
        try:
            return get_preset(d["preset"], **opts)
        except TypeError as e:
            raise ParseError(f"bad preset options: {e}") from None
    unknown = set(d) - _ARCH_FIELDS
    if unknown:
        raise ParseError(f"unknown arch fields: {sorted(unknown)}")
    layers = []
    for i, ld in enumerate(d["layers"]):
        bad = set(ld) - _LAYER_FIELDS
        if bad:
            raise ParseError(f"layer {i}: unknown fields {sorted(bad)}")
        ld = dict(ld)
        if ld.get("kernel") is not None:
            ld["kernel"] = tuple(ld["kernel"])
        layers.append(LayerSpec(**ld))
    return ArchSpec(d["name"], Family(d["family"]), tuple(layers), tuple(d["input_shape"]),
                    int(d["num_classes"]), tuple(d["default_widths"]), d.get("expansion_factor"))


def load_arch(ref: str | Path) -> ArchSpec:
    """Resolve a preset name or read an arch file."""
    if isinstance(ref, str) and ref in PRESETS:
        return get_preset(ref)
    path = Path(ref)
    if not path.exists():
        raise StructuralError(f"{ref!r} is neither a preset ({sorted(PRESETS)}) nor a file")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(str(e.msg), e.lineno) from None
    return arch_from_dict(doc)


def save_arch(arch: ArchSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(arch_to_dict(arch), indent=2) + "\n")
