"""Synthetic fine-grained domain-generalization benchmark.

Coarse category = background texture family (stripes, blobs, gradients).
Fine category = a 5x5 motif stamped at a random position; sibling fine
classes under one coarse parent differ from each other in only a few motif
cells.  Domain = a label-preserving style transform (per-channel gain and
bias, scalar gamma, pixel noise) applied after motif placement.  All
content randomness is drawn from per-sample streams that do not depend on
the domain, so identical styles produce identical images.

Container format (little-endian): magic ``HSSH``, format version u32,
sample count u32, then per sample the f32 image payload followed by
u16 fine, u16 coarse, u16 domain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSSH"
FORMAT_VERSION = 1


class IoError(Exception):
    pass


@dataclass
class DomainStyle:
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    channel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    noise_std: float = 0.0

    @classmethod
    def identity(cls) -> "DomainStyle":
        return cls()


def default_domains() -> list[DomainStyle]:
    """Source domain plus one strongly color/illumination-shifted target."""
    return [
        DomainStyle(noise_std=0.02),
        DomainStyle(
            channel_gain=(0.62, 1.05, 1.45),
            channel_bias=(0.16, -0.08, 0.04),
            gamma=1.35,
            noise_std=0.04,
        ),
    ]


@dataclass
class SyntheticConfig:
    num_coarse: int = 3
    num_fine: int = 8
    image_size: int = 32
    domains: list[DomainStyle] = field(default_factory=default_domains)
    train_per_class: int = 250
    val_per_class: int = 60
    test_per_class: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.num_fine < self.num_coarse:
            raise ValueError("need at least one fine class per coarse class")
        if len(self.domains) < 2:
            raise ValueError("need a source domain and at least one target domain")


def coarse_parent(fine: int, num_fine: int, num_coarse: int) -> tuple[int, int]:
    """(coarse label, variant index under that parent) for a fine label.

    Fine classes are chunked onto coarse parents as evenly as possible.
    """
    base = num_fine // num_coarse
    extra = num_fine % num_coarse
    start = 0
    for c in range(num_coarse):
        size = base + (1 if c < extra else 0)
        if fine < start + size:
            return c, fine - start
        start += size
    raise ValueError(f"fine label {fine} out of range")


# 5x5 motif bases, one per coarse family.
_MOTIF_BASES = [
    np.array([[1, 0, 0, 0, 1],
              [0, 1, 0, 1, 0],
              [0, 0, 1, 0, 0],
              [0, 1, 0, 1, 0],
              [1, 0, 0, 0, 1]], dtype=np.float32),
    np.array([[1, 1, 1, 1, 1],
              [1, 0, 0, 0, 1],
              [1, 0, 0, 0, 1],
              [1, 0, 0, 0, 1],
              [1, 1, 1, 1, 1]], dtype=np.float32),
    np.array([[0, 0, 1, 0, 0],
              [0, 0, 1, 0, 0],
              [1, 1, 1, 1, 1],
              [0, 0, 1, 0, 0],
              [0, 0, 1, 0, 0]], dtype=np.float32),
]

# cells flipped per variant; sibling motifs differ in at most 8 of 25 cells
_VARIANT_FLIPS = [
    [],
    [(0, 2), (2, 0), (2, 4), (4, 2)],
    [(0, 0), (0, 4), (4, 0), (4, 4)],
    [(1, 1), (1, 3), (3, 1), (3, 3)],
]


def motif(fine: int, num_fine: int, num_coarse: int) -> np.ndarray:
    coarse, variant = coarse_parent(fine, num_fine, num_coarse)
    m = _MOTIF_BASES[coarse % len(_MOTIF_BASES)].copy()
    for r, col in _VARIANT_FLIPS[variant % len(_VARIANT_FLIPS)]:
        m[r, col] = 1.0 - m[r, col]
    return m


def _background(coarse: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    kind = coarse % 3
    if kind == 0:  # stripes
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, 5.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(theta) * xx + np.sin(theta) * yy
        img = 0.5 + 0.22 * np.sin(2 * np.pi * freq * wave + phase)
    elif kind == 1:  # blobs
        img = np.full((size, size), 0.5, dtype=np.float32)
        for _ in range(4):
            cx, cy = rng.uniform(0, size, size=2)
            s = rng.uniform(2.5, 5.0)
            amp = rng.uniform(0.15, 0.3) * rng.choice([-1.0, 1.0])
            d2 = (xx * size - cx) ** 2 + (yy * size - cy) ** 2
            img = img + amp * np.exp(-d2 / (2 * s * s))
    else:  # gradients
        theta = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(theta) * xx + np.sin(theta) * yy
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-6)
        img = 0.35 + 0.3 * ramp
    return np.clip(img, 0.05, 0.95).astype(np.float32)


def render_sample(fine: int, cfg: SyntheticConfig, style: DomainStyle,
                  content_rng: np.random.Generator) -> np.ndarray:
    """One 3,H,W image in [0, 1]; content draws are style-independent."""
    size = cfg.image_size
    coarse, _ = coarse_parent(fine, cfg.num_fine, cfg.num_coarse)
    base = _background(coarse, size, content_rng)
    tint = content_rng.uniform(-1.0, 1.0, size=3).astype(np.float32)
    img = base[None, :, :] * (1.0 + 0.08 * tint[:, None, None])
    m = motif(fine, cfg.num_fine, cfg.num_coarse)
    r = int(content_rng.integers(2, size - 5 - 2 + 1))
    c = int(content_rng.integers(2, size - 5 - 2 + 1))
    img[:, r:r + 5, c:c + 5] = 0.1 + 0.8 * m[None, :, :]
    unit_noise = content_rng.standard_normal(size=(3, size, size)).astype(np.float32)
    img = np.clip(img, 0.0, 1.0) ** np.float32(style.gamma)
    gain = np.asarray(style.channel_gain, dtype=np.float32)[:, None, None]
    bias = np.asarray(style.channel_bias, dtype=np.float32)[:, None, None]
    img = gain * img + bias + np.float32(style.noise_std) * unit_noise
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class Split:
    images: np.ndarray  # N,3,H,W float32
    fine: np.ndarray
    coarse: np.ndarray
    domain: np.ndarray

    def __len__(self) -> int:
        return len(self.fine)


def _build_split(cfg: SyntheticConfig, split_id: int, per_class: int,
                 domain_idx: int) -> Split:
    style = cfg.domains[domain_idx]
    images, fine_l, coarse_l = [], [], []
    for fine in range(cfg.num_fine):
        coarse, _ = coarse_parent(fine, cfg.num_fine, cfg.num_coarse)
        for k in range(per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, split_id, fine, k]))
            images.append(render_sample(fine, cfg, style, rng))
            fine_l.append(fine)
            coarse_l.append(coarse)
    return Split(
        images=np.stack(images),
        fine=np.asarray(fine_l, dtype=np.uint16),
        coarse=np.asarray(coarse_l, dtype=np.uint16),
        domain=np.full(len(fine_l), domain_idx, dtype=np.uint16),
    )


def generate_dataset(cfg: SyntheticConfig, out_dir) -> dict[str, Path]:
    """Write source train/val and target test splits; fully seed-determined."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {
        "train": _build_split(cfg, 0, cfg.train_per_class, 0),
        "val": _build_split(cfg, 1, cfg.val_per_class, 0),
        "test": _build_split(cfg, 2, cfg.test_per_class, 1),
    }
    paths = {}
    for name, split in splits.items():
        path = out_dir / f"{name}.bin"
        write_split(path, split)
        paths[name] = path
    return paths


def write_split(path, split: Split) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(split)))
            for i in range(len(split)):
                fh.write(split.images[i].astype("<f4").tobytes())
                fh.write(struct.pack("<HHH", int(split.fine[i]),
                                     int(split.coarse[i]), int(split.domain[i])))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_split(path) -> Split:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IoError(f"{path} is not a dataset container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise IoError(f"unsupported container version {version}")
    if count == 0:
        raise IoError(f"{path} holds an empty split")
    body = len(blob) - 12
    if body % count:
        raise IoError(f"{path} is truncated")
    per_sample = body // count
    n_floats = (per_sample - 6) // 4
    if per_sample != n_floats * 4 + 6 or n_floats % 3:
        raise IoError(f"{path} has a malformed sample layout")
    hw = n_floats // 3
    side = int(round(np.sqrt(hw)))
    if side * side != hw:
        raise IoError(f"{path} images are not square")
    images = np.empty((count, 3, side, side), dtype=np.float32)
    fine = np.empty(count, dtype=np.uint16)
    coarse = np.empty(count, dtype=np.uint16)
    domain = np.empty(count, dtype=np.uint16)
    off = 12
    img_bytes = n_floats * 4
    for i in range(count):
        images[i] = np.frombuffer(blob, dtype="<f4", count=n_floats,
                                  offset=off).reshape(3, side, side)
        off += img_bytes
        fine[i], coarse[i], domain[i] = struct.unpack_from("<HHH", blob, off)
        off += 6
    return Split(images=images, fine=fine, coarse=coarse, domain=domain)
