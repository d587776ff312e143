"""Declarative architecture descriptions.

A :class:`ModelSpec` fully determines the parameter count, the output shape of
every layer at a given input resolution, and therefore the analytic cost used
by :mod:`bridgedistill.bench`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

KINDS = ("conv", "maxpool", "gap", "flatten", "fc")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer.

    ``conv`` computes ``relu(bn(conv(x)) + out[skip])`` with the optional
    pieces controlled by ``bn``, ``skip`` and ``relu``; ``fc`` is the same with
    a dense map.
    """

    kind: str
    name: str
    out: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    skip: Optional[int] = None
    bn: bool = False
    relu: bool = False


@dataclass(frozen=True)
class ModelSpec:
    name: str
    in_channels: int
    layers: tuple[LayerSpec, ...]
    # index of the layer whose output is the model's feature vector
    feature_index: int = -1
    fixed_resolution: Optional[int] = None
    # dense-only models consume N x in_channels vectors instead of images
    flat_input: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise SpecError(f"{self.name}: duplicate layer names")
        for i, l in enumerate(self.layers):
            if l.kind not in KINDS:
                raise SpecError(f"{self.name}: unknown layer kind {l.kind!r}")
            if l.skip is not None and not 0 <= l.skip < i:
                raise SpecError(f"{self.name}.{l.name}: skip source {l.skip} must precede layer {i}")
        # validates skip shapes at a nominal resolution
        self.shapes(self.fixed_resolution or 16)

    @property
    def feature_layer(self) -> int:
        return self.feature_index % len(self.layers)

    def shapes(self, resolution: int) -> list[tuple[int, ...]]:
        """Output shape (without batch) of every layer for a square input."""
        if self.fixed_resolution is not None and resolution != self.fixed_resolution:
            raise SpecError(f"{self.name} only accepts {self.fixed_resolution}x{self.fixed_resolution} input")
        cur: tuple[int, ...] = (self.in_channels,) if self.flat_input else (self.in_channels, resolution, resolution)
        out = []
        for i, l in enumerate(self.layers):
            if l.kind == "conv":
                if len(cur) != 3:
                    raise SpecError(f"{l.name}: conv after flattening")
                c, h, w = cur
                if h + 2 * l.padding < l.kernel:
                    raise SpecError(f"{l.name}: {h}x{w} input too small for kernel {l.kernel}")
                ho = (h + 2 * l.padding - l.kernel) // l.stride + 1
                wo = (w + 2 * l.padding - l.kernel) // l.stride + 1
                cur = (l.out, ho, wo)
            elif l.kind == "maxpool":
                c, h, w = cur
                if h < l.kernel or (h - l.kernel) % l.stride or (w - l.kernel) % l.stride:
                    raise SpecError(f"{l.name}: {h}x{w} does not tile with pool {l.kernel}/{l.stride}")
                cur = (c, (h - l.kernel) // l.stride + 1, (w - l.kernel) // l.stride + 1)
            elif l.kind == "gap":
                cur = (cur[0],)
            elif l.kind == "flatten":
                n = 1
                for d in cur:
                    n *= d
                cur = (n,)
            elif l.kind == "fc":
                if len(cur) != 1:
                    raise SpecError(f"{l.name}: fully connected layer needs a flat input, got {cur}")
                cur = (l.out,)
            if l.skip is not None and out[l.skip] != cur:
                raise SpecError(
                    f"{self.name}.{l.name}: skip from layer {l.skip} has shape {out[l.skip]}, expected {cur}")
            out.append(cur)
        return out

    def input_dims(self, resolution: int) -> list[tuple[int, ...]]:
        shp = self.shapes(resolution)
        first = (self.in_channels,) if self.flat_input else (self.in_channels, resolution, resolution)
        return [first] + shp[:-1]

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Named trainable tensor shapes, in declaration order."""
        res = self.fixed_resolution or 16
        ins = self.input_dims(res)
        out = []
        for l, inp in zip(self.layers, ins):
            if l.kind == "conv":
                out.append((f"{l.name}.weight", (l.out, inp[0], l.kernel, l.kernel)))
                out.append((f"{l.name}.bias", (l.out,)))
            elif l.kind == "fc":
                out.append((f"{l.name}.weight", (l.out, inp[0])))
                out.append((f"{l.name}.bias", (l.out,)))
            else:
                continue
            if l.bn:
                out.append((f"{l.name}.bn.gamma", (l.out,)))
                out.append((f"{l.name}.bn.beta", (l.out,)))
        return out

    def param_count(self) -> int:
        total = 0
        for _, shp in self.param_shapes():
            n = 1
            for d in shp:
                n *= d
            total += n
        return total

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    def count(self, kind: str) -> int:
        return sum(1 for l in self.layers if l.kind == kind)
