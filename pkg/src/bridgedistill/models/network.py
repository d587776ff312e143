"""Executable networks built from a :class:`ModelSpec`."""

from __future__ import annotations

import hashlib

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter, Tensor
from .spec import ModelSpec


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rf, shape[0] * rf
    else:
        fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Network:
    """A feed-forward network with optional additive skips.

    Parameters are named ``<prefix>.<layer>.<tensor>``; batch-norm running
    statistics are buffers that travel with checkpoints but receive no
    gradients.
    """

    def __init__(self, spec: ModelSpec, seed: int, prefix: str, dtype=np.float32):
        self.spec = spec
        self.prefix = prefix
        self.training = True
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, Tensor] = {}
        for name, shape in spec.param_shapes():
            full = f"{prefix}.{name}"
            if name.endswith(".weight"):
                data = xavier_uniform(rng, shape, dtype)
            elif name.endswith(".gamma"):
                data = np.ones(shape, dtype)
            else:
                data = np.zeros(shape, dtype)
            self.params[full] = Parameter(data, name=full)
        for l in spec.layers:
            if l.bn:
                self.buffers[f"{prefix}.{l.name}.bn.running_mean"] = Tensor(np.zeros(l.out, dtype))
                self.buffers[f"{prefix}.{l.name}.bn.running_var"] = Tensor(np.ones(l.out, dtype))

    # -- parameter management -------------------------------------------
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = dict(self.params)
        out.update(self.buffers)
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        mine = self.named_tensors()
        missing = sorted(set(mine) - set(tensors))
        if missing:
            raise KeyError(f"checkpoint lacks tensors: {', '.join(missing[:5])}")
        for name, t in mine.items():
            arr = np.asarray(tensors[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = np.ascontiguousarray(arr.astype(t.dtype))

    def astype(self, dtype) -> "Network":
        for t in self.named_tensors().values():
            t.data = t.data.astype(dtype)
        return self

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def train(self, flag: bool = True) -> "Network":
        self.training = flag
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # -- forward --------------------------------------------------------
    def _layer(self, i: int, x: Tensor, outs: list[Tensor]) -> Tensor:
        l = self.spec.layers[i]
        p = f"{self.prefix}.{l.name}"
        if l.kind == "conv":
            y = ad.conv2d(x, self.params[f"{p}.weight"], self.params[f"{p}.bias"], l.stride, l.padding)
        elif l.kind == "fc":
            y = ad.fully_connected(x, self.params[f"{p}.weight"], self.params[f"{p}.bias"])
        elif l.kind == "maxpool":
            return ad.maxpool2d(x, l.kernel, l.stride)
        elif l.kind == "gap":
            return ad.global_avg_pool(x)
        else:
            return ad.flatten(x)
        if l.bn:
            y = ad.batchnorm(
                y, self.params[f"{p}.bn.gamma"], self.params[f"{p}.bn.beta"],
                mode="train" if self.training else "infer",
                running_mean=self.buffers[f"{p}.bn.running_mean"].data,
                running_var=self.buffers[f"{p}.bn.running_var"].data,
            )
        if l.skip is not None:
            y = ad.add(y, outs[l.skip])
        if l.relu:
            y = ad.relu(y)
        return y

    def run(self, x: Tensor, start: int = 0, stop: int | None = None) -> list[Tensor]:
        """Outputs of layers ``start..stop-1``; skips must stay inside the range."""
        stop = len(self.spec.layers) if stop is None else stop
        outs: list[Tensor] = [None] * start  # type: ignore[list-item]
        for i in range(start, stop):
            x = self._layer(i, x, outs)
            outs.append(x)
        return outs[start:]

    def __call__(self, x: Tensor) -> Tensor:
        return self.run(x)[-1]


def params_digest(tensors: dict[str, Tensor]) -> str:
    """SHA-256 over names and raw bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name].data).tobytes())
    return h.hexdigest()
