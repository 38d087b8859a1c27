"""On-disk synthetic datasets and the seeded batch iterator."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Sequence

import numpy as np

from ..core import dtns
from ..core.rng import Rng
from ..errors import ConfigError, FormatError
from .synth import DepthSample, SceneSpec, generate_scene

SCHEMA_VERSION = 1


@dataclass
class Dataset:
    images: np.ndarray   # n x 3 x H x W
    depth: np.ndarray    # n x 1 x H x W
    mask: np.ndarray     # n x 1 x H x W (bool)
    indices: np.ndarray  # scene index of every sample
    spec: Optional[SceneSpec] = None

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> DepthSample:
        return DepthSample(self.images[i], self.depth[i], self.mask[i], {"index": int(self.indices[i])})

    @classmethod
    def from_samples(cls, samples: Sequence[DepthSample], spec: Optional[SceneSpec] = None) -> "Dataset":
        return cls(np.stack([s.image for s in samples]), np.stack([s.depth for s in samples]),
                   np.stack([s.mask for s in samples]),
                   np.array([s.meta["index"] for s in samples], dtype=np.int64), spec)


def generate_split(spec: SceneSpec, split: str = "train") -> Dataset:
    """In-memory generation; val indices follow the train indices."""
    start, n = (0, spec.n_train) if split == "train" else (spec.n_train, spec.n_val)
    return Dataset.from_samples([generate_scene(spec, start + i) for i in range(n)], spec)


def _manifest(spec: SceneSpec, start: int, n: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "spec": spec.to_dict(), "start": int(start), "count": int(n)}


def write_dataset(spec: SceneSpec, n: int, out_dir, start: int = 0) -> Path:
    """Write samples ``start .. start+n-1``; resumes an interrupted write with the same spec."""
    spec.validate()
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    manifest = _manifest(spec, start, n)
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text())
        if existing != manifest:
            raise ConfigError(f"{manifest_path}: existing manifest does not match the requested spec")
    for sub in ("imgs", "depth", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2))
    for k in range(n):
        idx = start + k
        name = f"{idx:06d}"
        if (out / "meta" / f"{name}.json").exists():
            continue
        s = generate_scene(spec, idx)
        depth = np.where(s.mask, s.depth, 0.0).astype(np.float32)
        dtns.save(out / "imgs" / f"{name}.dtns", s.image)
        dtns.save(out / "depth" / f"{name}.dtns", depth)
        # sidecar last: its presence marks the sample complete
        (out / "meta" / f"{name}.json").write_text(json.dumps(s.meta))
    return out


def write_splits(spec: SceneSpec, out_dir) -> Path:
    out = Path(out_dir)
    write_dataset(spec, spec.n_train, out / "train", start=0)
    write_dataset(spec, spec.n_val, out / "val", start=spec.n_train)
    return out


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{manifest_path}: unsupported schema version {manifest.get('schema_version')}")
    spec = SceneSpec.from_dict(manifest["spec"])
    if spec.height % 32 or spec.width % 32:
        raise ConfigError(f"{manifest_path}: image size {spec.height}x{spec.width} not divisible by 32")
    samples = []
    for k in range(manifest["count"]):
        idx = manifest["start"] + k
        name = f"{idx:06d}"
        image = dtns.load(root / "imgs" / f"{name}.dtns")
        depth = dtns.load(root / "depth" / f"{name}.dtns")
        if image.shape[-2:] != (spec.height, spec.width) or depth.shape != (1,) + image.shape[-2:]:
            raise FormatError(f"{root / 'imgs' / name}: unexpected shapes {image.shape} / {depth.shape}")
        if image.shape[-2] % 32 or image.shape[-1] % 32:
            raise ConfigError(f"{name}: image size {image.shape[-2:]} not divisible by 32")
        meta = json.loads((root / "meta" / f"{name}.json").read_text())
        samples.append(DepthSample(image, depth, depth > 0, meta))
    return Dataset.from_samples(samples, spec)


def load_split(data_dir, split: str) -> Dataset:
    root = Path(data_dir)
    return load_dataset(root / split if (root / split / "manifest.json").exists() else root)


class Batch(NamedTuple):
    images: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    indices: np.ndarray
    flips: np.ndarray


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return Rng(shuffle_seed).stream("shuffle", epoch).permutation(n)


def batch_iterator(dataset: Dataset, batch: int = 8, shuffle_seed: int = 0, epoch: int = 0,
                   flip: bool = False, start_batch: int = 0, shuffle: bool = True) -> Iterator[Batch]:
    """Batches of one epoch in a seeded order; the last partial batch is kept.

    ``flip`` applies seeded horizontal flips with probability 0.5; ``start_batch``
    skips ahead for exact resume within an epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    order = epoch_order(n, shuffle_seed, epoch) if shuffle else np.arange(n)
    flips = Rng(shuffle_seed).stream("flip", epoch).random(n) < 0.5 if flip else np.zeros(n, dtype=bool)
    for b, lo in enumerate(range(0, n, batch)):
        if b < start_batch:
            continue
        idx = order[lo:lo + batch]
        fl = flips[lo:lo + batch]
        images, depth, mask = dataset.images[idx], dataset.depth[idx], dataset.mask[idx]
        if fl.any():
            images, depth, mask = images.copy(), depth.copy(), mask.copy()
            images[fl] = images[fl][..., ::-1]
            depth[fl] = depth[fl][..., ::-1]
            mask[fl] = mask[fl][..., ::-1]
        yield Batch(images, depth, mask, idx, fl)


def num_batches(n: int, batch: int) -> int:
    return (n + batch - 1) // batch
