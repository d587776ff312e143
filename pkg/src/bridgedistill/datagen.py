"""Procedural face-analog images, identity splits and low-resolution degradation.

An identity is a set of structural parameters: the placement, size and
contrast of a fixed list of Gaussian "feature" blobs on an oval, plus a
fine sinusoidal texture. Fine texture is only resolvable at high resolution,
coarse blob layout survives down to 16x16.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

SPLITS = ("private", "public", "target")

# (x, y, sigma, amplitude) of the template blobs on a unit canvas
_TEMPLATE = np.array([
    [0.35, 0.40, 0.055, -0.35],   # left eye
    [0.65, 0.40, 0.055, -0.35],   # right eye
    [0.34, 0.31, 0.060, -0.20],   # left brow
    [0.66, 0.31, 0.060, -0.20],   # right brow
    [0.50, 0.55, 0.050, 0.18],    # nose
    [0.50, 0.71, 0.075, -0.30],   # mouth
    [0.50, 0.86, 0.080, 0.12],    # chin
])
N_BLOBS = len(_TEMPLATE)
N_WAVES = 6


@dataclass(frozen=True)
class IdentityParams:
    id: int
    offsets: np.ndarray      # N_BLOBS x 2, canvas units
    sigma_scale: np.ndarray  # N_BLOBS
    amp_scale: np.ndarray    # N_BLOBS
    oval: np.ndarray         # (half-width, half-height), canvas units
    skin: float
    texture_seed: int

    def structure_vector(self) -> np.ndarray:
        """Structural parameters normalized to comparable units."""
        return np.concatenate([
            self.offsets.ravel() / 0.04,
            (self.sigma_scale - 1.0) / 0.25,
            (self.amp_scale - 1.0) / 0.35,
            (self.oval - 0.36) / 0.04,
            [(self.skin - 0.55) / 0.08],
        ])


@dataclass
class FaceSample:
    image: np.ndarray  # 1 x H x W float32 in [0, 1]
    identity: int
    split: str
    resolution: int
    sample_id: str
    index: int = 0
    lineage: Optional[str] = None


@dataclass(frozen=True)
class DegradeConfig:
    count: int = 4
    jitter_px: float = 3.0
    blur_sigma_range: tuple[float, float] = (0.0, 0.8)
    illumination_gain_range: tuple[float, float] = (0.7, 1.3)
    p: int = 16

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("DegradeConfig.count must be >= 1")
        if self.p not in (96, 64, 32, 16):
            raise ValueError(f"unsupported resolution {self.p}")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


# --------------------------------------------------------------------------
# identities
# --------------------------------------------------------------------------

def _draw_identity(rng: np.random.Generator, ident: int) -> IdentityParams:
    return IdentityParams(
        id=ident,
        offsets=rng.uniform(-0.04, 0.04, size=(N_BLOBS, 2)),
        sigma_scale=rng.uniform(0.75, 1.25, size=N_BLOBS),
        amp_scale=rng.uniform(0.65, 1.35, size=N_BLOBS),
        oval=rng.uniform(0.32, 0.40, size=2),
        skin=float(rng.uniform(0.47, 0.63)),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
    )


def structural_distance(a: IdentityParams, b: IdentityParams) -> float:
    return float(np.linalg.norm(a.structure_vector() - b.structure_vector()))


def synth_identities(n: int, seed: int, margin: float = 2.0, max_tries: int = 100_000) -> list[IdentityParams]:
    """Rejection-sample ``n`` identities with pairwise structural distance >= margin."""
    rng = _rng(seed, 0x1D)
    out: list[IdentityParams] = []
    vecs: list[np.ndarray] = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n} identities with margin {margin}")
        cand = _draw_identity(rng, len(out))
        v = cand.structure_vector()
        if vecs and np.min(np.linalg.norm(np.asarray(vecs) - v, axis=1)) < margin:
            continue
        out.append(cand)
        vecs.append(v)
    return out


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _texture(ident: IdentityParams):
    r = _rng(ident.texture_seed)
    freq = r.uniform(9.0, 15.0, size=N_WAVES)  # cycles per canvas
    theta = r.uniform(0, np.pi, size=N_WAVES)
    phase = r.uniform(0, 2 * np.pi, size=N_WAVES)
    amp = r.uniform(0.015, 0.035, size=N_WAVES)
    return freq, theta, phase, amp


def render_hr(ident: IdentityParams, nuisance_seed: int, size: int = 64, split: str = "public",
              index: int = 0, shift_px: float = 1.5, noise: float = 0.02) -> FaceSample:
    """Render one high-resolution sample: identity structure plus per-sample nuisance."""
    r = _rng(nuisance_seed)
    dx, dy = r.uniform(-shift_px, shift_px, size=2) / size
    contrast = r.uniform(0.85, 1.15)
    bright = r.uniform(-0.05, 0.05)
    c = (np.arange(size) + 0.5) / size
    X, Y = np.meshgrid(c - dx, c - dy)
    ox, oy = ident.oval
    ell = ((X - 0.5) / ox) ** 2 + ((Y - 0.55) / oy) ** 2
    face = 1.0 / (1.0 + np.exp((ell - 1.0) * 12.0))
    img = 0.15 + (ident.skin - 0.15) * face
    for (bx, by, bs, ba), (ox_, oy_), ss, aa in zip(_TEMPLATE, ident.offsets, ident.sigma_scale, ident.amp_scale):
        s = bs * ss
        img = img + ba * aa * np.exp(-((X - bx - ox_) ** 2 + (Y - by - oy_) ** 2) / (2 * s * s))
    freq, theta, phase, amp = _texture(ident)
    tex = np.zeros_like(X)
    for f, th, ph, a in zip(freq, theta, phase, amp):
        tex += a * np.sin(2 * np.pi * f * (X * np.cos(th) + Y * np.sin(th)) + ph)
    img = img + tex * face
    img = (img - 0.5) * contrast + 0.5 + bright
    img = img + r.normal(0.0, noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    sid = f"{split[:2]}{ident.id:04d}_{index:03d}"
    return FaceSample(img[None], ident.id, split, size, sid, index)


# --------------------------------------------------------------------------
# degradation
# --------------------------------------------------------------------------

def area_resize_matrix(src: int, dst: int) -> np.ndarray:
    """dst x src matrix averaging each output cell's exact footprint (box filter)."""
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def box_downsample(img: np.ndarray, p: int) -> np.ndarray:
    h = img.shape[-1]
    if p == h:
        return img.copy()
    m = area_resize_matrix(h, p)
    return (m @ img @ m.T).astype(img.dtype)


def upsample_nearest(img: np.ndarray, size: int) -> np.ndarray:
    idx = (np.arange(size) * img.shape[-1]) // size
    return img[..., idx[:, None], idx[None, :]]


def degrade_image(img: np.ndarray, cfg: DegradeConfig, rng: np.random.Generator) -> tuple[np.ndarray, str]:
    """One degraded copy of a 2-d HR image and a descriptor of what was applied."""
    hr = img.shape[-1]
    if cfg.p > hr:
        raise ValueError(f"target resolution {cfg.p} exceeds source resolution {hr}")
    out = img.astype(np.float64)
    tx = ty = 0.0
    zoom = 1.0
    if cfg.jitter_px > 0:
        tx, ty = rng.uniform(-cfg.jitter_px, cfg.jitter_px, size=2)
        zoom = rng.uniform(0.95, 1.05)
        centre = (hr - 1) / 2.0
        offset = centre - zoom * centre + np.array([ty, tx])
        out = ndimage.affine_transform(out, np.diag([zoom, zoom]), offset=offset, order=1, mode="nearest")
    out = box_downsample(out, cfg.p)
    lo, hi = cfg.blur_sigma_range
    sigma = rng.uniform(lo, hi) if hi > lo else lo
    if sigma > 0:
        out = ndimage.gaussian_filter(out, sigma, mode="nearest")
    glo, ghi = cfg.illumination_gain_range
    gain = rng.uniform(glo, ghi) if ghi > glo else glo
    out = np.clip(out * gain, 0.0, 1.0)
    desc = f"p{cfg.p}:dx{tx:+.2f}:dy{ty:+.2f}:z{zoom:.3f}:blur{sigma:.3f}:gain{gain:.3f}"
    return out.astype(np.float32), desc


def degrade(sample: FaceSample, cfg: DegradeConfig, seed: int) -> list[FaceSample]:
    """The degraded set D(I): ``cfg.count`` low-resolution variants of one sample."""
    if cfg.p > sample.resolution:
        raise ValueError(f"target resolution {cfg.p} exceeds sample resolution {sample.resolution}")
    rng = _rng(seed, sample.identity, sample.index, cfg.p)
    out = []
    for k in range(cfg.count):
        img, desc = degrade_image(sample.image[0], cfg, rng)
        out.append(FaceSample(img[None], sample.identity, sample.split, cfg.p,
                              f"{sample.sample_id}@{cfg.p}#{k}", sample.index,
                              lineage=f"{sample.sample_id}|{desc}"))
    return out


def degrade_batch(images: np.ndarray, identities: np.ndarray, indices: np.ndarray,
                  cfg: DegradeConfig, seed: int) -> np.ndarray:
    """Array form of :func:`degrade`: (N,1,H,W) -> (N, count, 1, p, p)."""
    out = np.empty((len(images), cfg.count, 1, cfg.p, cfg.p), dtype=np.float32)
    for i, (img, ident, idx) in enumerate(zip(images, identities, indices)):
        rng = _rng(seed, int(ident), int(idx), cfg.p)
        for k in range(cfg.count):
            out[i, k, 0] = degrade_image(img[0], cfg, rng)[0]
    return out


# --------------------------------------------------------------------------
# splits and pairs
# --------------------------------------------------------------------------

def make_splits(identities: Sequence, fractions: Sequence[float], seed: int):
    """Partition identity ids into (private, public, target); sizes are rounded."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be 3 non-negative values summing to 1, got {fractions}")
    ids = [i.id if isinstance(i, IdentityParams) else int(i) for i in identities]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate identity ids")
    n = len(ids)
    order = _rng(seed, 0x5B).permutation(n)
    n_priv = int(round(fractions[0] * n))
    n_pub = int(round(fractions[1] * n))
    n_pub = min(n_pub, n - n_priv)
    shuffled = [ids[i] for i in order]
    private = sorted(shuffled[:n_priv])
    public = sorted(shuffled[n_priv:n_priv + n_pub])
    target = sorted(shuffled[n_priv + n_pub:])
    assert not (set(private) & set(public)) and not (set(public) & set(target)) and not (set(private) & set(target))
    return private, public, target


def verification_pairs(samples: Sequence, n_pos: int, n_neg: int, seed: int):
    """Distinct same-identity and cross-identity pairs.

    ``samples`` may be FaceSample objects or anything with an ``identity``
    attribute; the pairs reference the given objects.
    """
    by_id: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_id.setdefault(int(s.identity), []).append(i)
    ids = sorted(by_id)
    if len(ids) < 2:
        raise ValueError("verification pairs need at least two identities")
    rng = _rng(seed, 0x9A)
    seen: set[tuple[int, int]] = set()
    pos: list = []
    multi = [i for i in ids if len(by_id[i]) > 1]
    max_pos = sum(len(by_id[i]) * (len(by_id[i]) - 1) // 2 for i in multi)
    if n_pos > max_pos:
        raise ValueError(f"only {max_pos} distinct positive pairs available")
    while len(pos) < n_pos:
        ident = multi[rng.integers(len(multi))]
        a, b = rng.choice(by_id[ident], size=2, replace=False)
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        pos.append((samples[key[0]], samples[key[1]], True))
    neg: list = []
    while len(neg) < n_neg:
        ia, ib = rng.choice(len(ids), size=2, replace=False)
        a = by_id[ids[ia]][rng.integers(len(by_id[ids[ia]]))]
        b = by_id[ids[ib]][rng.integers(len(by_id[ids[ib]]))]
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        neg.append((samples[key[0]], samples[key[1]], False))
    return pos + neg


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    n_identities: int = 60
    fractions: tuple[float, float, float] = (20 / 60, 30 / 60, 10 / 60)
    samples_per_identity: int = 40
    hr: int = 64
    train_fraction: float = 0.8
    margin: float = 2.0
    seed: int = 0


@dataclass
class FaceDataset:
    """All HR samples of a generated dataset plus its identity partition."""

    config: DatasetConfig
    samples: list[FaceSample]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def select(self, split: str, subset: Optional[str] = None) -> list[FaceSample]:
        """Samples of one split; ``subset`` is 'train', 'test' or None for both."""
        cut = int(round(self.config.train_fraction * self.config.samples_per_identity))
        out = [s for s in self.samples if s.split == split]
        if subset == "train":
            out = [s for s in out if s.index < cut]
        elif subset == "test":
            out = [s for s in out if s.index >= cut]
        return out

    def arrays(self, split: str, subset: Optional[str] = None):
        """(images N x 1 x H x W, identity ids, per-identity sample indices)."""
        sel = self.select(split, subset)
        if not sel:
            return (np.zeros((0, 1, self.config.hr, self.config.hr), np.float32),
                    np.zeros(0, np.int64), np.zeros(0, np.int64))
        x = np.stack([s.image for s in sel]).astype(np.float32)
        return x, np.array([s.identity for s in sel]), np.array([s.index for s in sel])


def generate_dataset(cfg: DatasetConfig = DatasetConfig()) -> FaceDataset:
    idents = synth_identities(cfg.n_identities, cfg.seed, cfg.margin)
    private, public, target = make_splits(idents, cfg.fractions, cfg.seed)
    split_of = {i: "private" for i in private} | {i: "public" for i in public} | {i: "target" for i in target}
    samples = []
    for ident in idents:
        for k in range(cfg.samples_per_identity):
            seed = int(np.random.SeedSequence([cfg.seed, ident.id, k, 0xF0]).generate_state(1)[0])
            samples.append(render_hr(ident, seed, cfg.hr, split_of[ident.id], k))
    return FaceDataset(cfg, samples, {"private": private, "public": public, "target": target})


def check_split_disjoint(ds: FaceDataset) -> None:
    seen: dict[int, str] = {}
    for s in ds.samples:
        prev = seen.setdefault(s.identity, s.split)
        if prev != s.split:
            raise ValueError(f"identity {s.identity} appears in both {prev} and {s.split}")
    parts = [set(ds.splits[k]) for k in SPLITS]
    if parts[0] & parts[1] or parts[1] & parts[2] or parts[0] & parts[2]:
        raise ValueError("identity splits overlap")


# --------------------------------------------------------------------------
# on-disk format
# --------------------------------------------------------------------------

MANIFEST = "manifest"


def write_dataset(ds: FaceDataset, root: os.PathLike | str) -> Path:
    """Write a manifest plus one raw little-endian float32 file per image."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    c = ds.config
    lines = [
        "# bridgedistill dataset v1",
        f"# config n_identities={c.n_identities} fractions={','.join(repr(f) for f in c.fractions)} "
        f"samples_per_identity={c.samples_per_identity} hr={c.hr} train_fraction={c.train_fraction!r} "
        f"margin={c.margin!r} seed={c.seed}",
    ]
    for s in ds.samples:
        rel = f"images/{s.sample_id}.f32"
        (root / rel).write_bytes(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
        lines.append(f"sample={s.sample_id} identity={s.identity} index={s.index} split={s.split} "
                     f"resolution={s.resolution} path={rel} lineage={s.lineage or '-'}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    return root


def read_dataset(root: os.PathLike | str) -> FaceDataset:
    root = Path(root)
    text = (root / MANIFEST).read_text().splitlines()
    cfg_kv = dict(kv.split("=", 1) for kv in text[1].split()[2:])
    cfg = DatasetConfig(
        n_identities=int(cfg_kv["n_identities"]),
        fractions=tuple(float(f) for f in cfg_kv["fractions"].split(",")),
        samples_per_identity=int(cfg_kv["samples_per_identity"]),
        hr=int(cfg_kv["hr"]),
        train_fraction=float(cfg_kv["train_fraction"]),
        margin=float(cfg_kv["margin"]),
        seed=int(cfg_kv["seed"]),
    )
    samples = []
    for line in text[2:]:
        kv = dict(part.split("=", 1) for part in line.split())
        res = int(kv["resolution"])
        img = np.frombuffer((root / kv["path"]).read_bytes(), dtype="<f4").reshape(1, res, res).astype(np.float32)
        samples.append(FaceSample(img, int(kv["identity"]), kv["split"], res, kv["sample"], int(kv["index"]),
                                  None if kv["lineage"] == "-" else kv["lineage"]))
    splits = {k: sorted({s.identity for s in samples if s.split == k}) for k in SPLITS}
    return FaceDataset(cfg, samples, splits)


def with_seed(cfg: DatasetConfig, seed: int) -> DatasetConfig:
    return replace(cfg, seed=seed)
