"""Analytic and measured inference cost: parameters, MACs, memory, throughput."""

from __future__ import annotations

import os
import platform
import threading
import time
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Tensor
from .models import ModelSpec, Network, StudentModel, TeacherHandle

MIN_BATCHES = 10
WARMUP_BATCHES = 2


@dataclass
class CostReport:
    model: str
    resolution: int
    params: int
    macs: int
    flops: int
    param_bytes: int
    peak_activation_bytes: int
    throughput_faces_per_sec: float
    hardware: str
    batch: int
    threads: int = 1

    def __post_init__(self):
        if self.flops != 2 * self.macs:
            raise ValueError("flops must equal 2 * macs")

    def line(self) -> str:
        return (f"model={self.model} res={self.resolution} params={self.params} macs={self.macs} "
                f"flops={self.flops} param_bytes={self.param_bytes} peak_act_bytes={self.peak_activation_bytes} "
                f"faces_per_s={self.throughput_faces_per_sec:.1f} batch={self.batch} threads={self.threads} "
                f"hw=\"{self.hardware}\"")


def cost_table(reports: Sequence[CostReport]) -> str:
    """Human-readable table, one row per report."""
    head = f"{'model':<16}{'res':>5}{'params':>11}{'MACs':>13}{'param MB':>10}{'act MB':>9}{'faces/s':>11}"
    rows = [head, "-" * len(head)]
    for r in reports:
        rows.append(f"{r.model:<16}{r.resolution:>5}{r.params / 1e6:>10.3f}M{r.macs / 1e6:>12.3f}M"
                    f"{r.param_bytes / 2**20:>10.3f}{r.peak_activation_bytes / 2**20:>9.3f}"
                    f"{r.throughput_faces_per_sec:>11.1f}")
    if reports:
        rows.append(f"hardware: {reports[0].hardware}; batch {reports[0].batch}; threads {reports[0].threads}")
    return "\n".join(rows)


def _spec_of(model) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, (StudentModel, TeacherHandle)):
        return model.net.spec
    if isinstance(model, Network):
        return model.spec
    raise TypeError(f"cannot find a model spec on {type(model).__name__}")


def count_macs(model_spec: Union[ModelSpec, object], resolution: int) -> int:
    """Multiply-accumulates of one forward pass; only conv and fc layers count."""
    spec = _spec_of(model_spec)
    ins = spec.input_dims(resolution)
    outs = spec.shapes(resolution)
    total = 0
    for l, i, o in zip(spec.layers, ins, outs):
        if l.kind == "conv":
            total += l.kernel * l.kernel * i[0] * o[0] * o[1] * o[2]
        elif l.kind == "fc":
            total += i[0] * o[0]
    return total


def _numel(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def memory_footprint(model, resolution: int, batch: int = 1, dtype=None) -> tuple[int, int]:
    """``(param_bytes, peak_activation_bytes)`` for inference.

    Layers run in declaration order. While layer ``i`` runs, its input, its
    output and every earlier output still awaited by a later skip are live;
    the peak is the maximum over layers. Batch-norm running statistics are
    buffers and are not included in the parameter bytes.
    """
    spec = _spec_of(model)
    if dtype is None:
        dtype = _dtype_of(model)
    item = np.dtype(dtype).itemsize
    n_params = spec.param_count()
    ins = spec.input_dims(resolution)
    outs = spec.shapes(resolution)
    last_use = {}
    for k, l in enumerate(spec.layers):
        if l.skip is not None:
            last_use[l.skip] = max(last_use.get(l.skip, -1), k)
    peak = 0
    for i in range(len(spec.layers)):
        live = _numel(ins[i]) + _numel(outs[i])
        live += sum(_numel(outs[j]) for j, k in last_use.items() if j < i - 1 and k >= i)
        peak = max(peak, live)
    return n_params * item, peak * batch * item


def _dtype_of(model):
    if isinstance(model, ModelSpec):
        return np.float32
    net = model if isinstance(model, Network) else model.net
    return next(iter(net.params.values())).dtype


def _inference_fn(model):
    if isinstance(model, StudentModel):
        return lambda x: model.forward(x)[1]
    if isinstance(model, TeacherHandle):
        return model.logits
    if isinstance(model, Network):
        return model
    raise TypeError(f"cannot benchmark {type(model).__name__}")


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu}; {os.cpu_count()} cpus; {platform.system()}; numpy {np.__version__}"


def throughput(model, resolution: int, duration_s: float, threads: int = 1, batch: int = 32,
               seed: int = 0) -> tuple[float, dict]:
    """Faces per second of inference-mode forward passes on random inputs.

    Warm-up batches are excluded. Each worker thread gets its own input and
    reuses the read-only model; counts are summed after all workers join.
    BLAS is pinned to one thread per worker. Returns the rate and a dict with
    batch, threads, batches and hardware.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if threads < 1 or batch < 1:
        raise ValueError("threads and batch must be >= 1")
    if isinstance(model, TeacherHandle) and resolution != model.hr:
        raise ValueError(f"teacher runs at {model.hr}px only")
    fn = _inference_fn(model)
    if hasattr(model, "eval"):
        model.eval()
    dt = _dtype_of(model)
    spec = _spec_of(model)
    shape = (batch, spec.in_channels, resolution, resolution)
    with threadpool_limits(1):
        x0 = Tensor(np.random.default_rng(seed).random(shape).astype(dt))
        t0 = time.perf_counter()
        for _ in range(WARMUP_BATCHES):
            fn(x0)
        per_batch = (time.perf_counter() - t0) / WARMUP_BATCHES
        if duration_s < MIN_BATCHES * per_batch / threads:
            raise ValueError(f"duration {duration_s}s is too short for {MIN_BATCHES} batches "
                             f"(~{per_batch:.3g}s per batch)")
        counts = [0] * threads
        start = threading.Barrier(threads + 1)

        def worker(w: int):
            x = Tensor(np.random.default_rng(seed + 1 + w).random(shape).astype(dt))
            start.wait()
            end = time.perf_counter() + duration_s
            while time.perf_counter() < end or sum(counts) < MIN_BATCHES:
                fn(x)
                counts[w] += 1

        pool = [threading.Thread(target=worker, args=(w,)) for w in range(threads)]
        for t in pool:
            t.start()
        start.wait()
        t1 = time.perf_counter()
        for t in pool:
            t.join()
        elapsed = time.perf_counter() - t1
    n = sum(counts)
    info = {"batch": batch, "threads": threads, "batches": n, "hardware": hardware_descriptor(),
            "seconds": elapsed}
    return n * batch / elapsed, info


def cost_report(model, resolution: int, name: str = "", duration_s: float = 1.0, batch: int = 32,
                threads: int = 1) -> CostReport:
    spec = _spec_of(model)
    macs = count_macs(spec, resolution)
    pbytes, abytes = memory_footprint(model, resolution, 1)
    rate, info = throughput(model, resolution, duration_s, threads, batch)
    return CostReport(name or spec.name, resolution, spec.param_count(), macs, 2 * macs, pbytes, abytes, rate,
                      info["hardware"], batch, threads)
