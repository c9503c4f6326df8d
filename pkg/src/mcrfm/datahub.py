"""Feature caches, frozen episodes, and the synthetic hierarchy generator.

Cache format "FVEC1" (all integers little-endian):
  bytes 0..4    magic b"FVEC1"
  bytes 5..8    uint32 feature dim d
  bytes 9..12   uint32 sample count n
  bytes 13..16  uint32 label count K
  then n*d float32 features (row-major), then n uint32 labels.
A JSON sidecar at <path>.json records class names and provenance.

Episodes persist the exact support/query indices so every method and
every rerun sees identical splits.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FVEC1"
HEADER = struct.Struct("<5sIII")


def stream_rng(*parts) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of identifiers.

    The key is a 128-bit digest of the parts, so every (seed, purpose)
    combination gets an independent stream with no global state involved.
    """
    digest = hashlib.sha256("/".join(map(str, parts)).encode("utf-8")).digest()[:16]
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


class DataFormatError(RuntimeError):
    """Raised for malformed cache or episode files."""


class EpisodeError(ValueError):
    """Raised when an episode cannot be sampled or validated."""


@dataclass
class FeatureCache:
    """Cached backbone (or synthetic) features plus integer labels."""

    features: np.ndarray  # (n, d) float32 on disk; use float64_features for math
    labels: np.ndarray  # (n,) uint32
    class_names: list[str]
    provenance: dict

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise DataFormatError(f"label count {self.labels.shape} does not match {n} rows")
        if n < self.num_classes:
            raise DataFormatError("fewer samples than classes")
        if n and self.labels.max() >= self.num_classes:
            raise DataFormatError(
                f"label {self.labels.max()} out of range for {self.num_classes} classes"
            )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def float64_features(self) -> np.ndarray:
        return self.features.astype(np.float64)


def write_cache(path: str | Path, cache: FeatureCache) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = cache.features.shape
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, d, n, cache.num_classes))
        f.write(np.ascontiguousarray(cache.features, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(cache.labels, dtype="<u4").tobytes())
    sidecar = {"class_names": cache.class_names, "provenance": cache.provenance}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_cache(path: str | Path) -> FeatureCache:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} < {HEADER.size} bytes)")
    magic, d, n, k = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    expected = HEADER.size + n * d * 4 + n * 4
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for n={n}, d={d}, got {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=HEADER.size + n * d * 4)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        class_names = sidecar.get("class_names") or [f"class{i}" for i in range(k)]
        provenance = sidecar.get("provenance", {})
    else:
        class_names = [f"class{i}" for i in range(k)]
        provenance = {}
    if len(class_names) != k:
        raise DataFormatError(
            f"{path}: sidecar lists {len(class_names)} classes, header says {k}"
        )
    return FeatureCache(features.copy(), labels.copy(), list(class_names), provenance)


def cache_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# -- episodes ----------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    """A frozen support/query split, persisted verbatim."""

    k_shot: int
    seed: int
    support: dict[int, list[int]]  # class id -> sorted support indices
    query: list[int]  # sorted query indices
    cache_hash: str

    @property
    def support_indices(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.support[k]) for k in sorted(self.support)])

    def to_dict(self) -> dict:
        return {
            "k_shot": self.k_shot,
            "seed": self.seed,
            "support": {str(k): list(map(int, v)) for k, v in sorted(self.support.items())},
            "query": list(map(int, self.query)),
            "cache_hash": self.cache_hash,
        }


def sample_episode(cache: FeatureCache, path: str | Path, k_shot: int, seed: int) -> Episode:
    """Draw k_shot support samples per class with a counter-based generator.

    Each class uses an independent Philox stream keyed by (seed, class id),
    so the draw depends on nothing global and is reproducible bit-for-bit.
    """
    if k_shot < 1:
        raise EpisodeError(f"k_shot must be >= 1, got {k_shot}")
    support: dict[int, list[int]] = {}
    taken = np.zeros(len(cache.labels), dtype=bool)
    for k in range(cache.num_classes):
        idx = np.flatnonzero(cache.labels == k)
        if idx.size <= k_shot:
            raise EpisodeError(
                f"class {k} ({cache.class_names[k]!r}) has {idx.size} samples, "
                f"needs more than k_shot={k_shot}"
            )
        rng = stream_rng("episode", seed, k)
        chosen = rng.choice(idx, size=k_shot, replace=False)
        chosen.sort()
        support[k] = [int(i) for i in chosen]
        taken[chosen] = True
    query = [int(i) for i in np.flatnonzero(~taken)]
    return Episode(k_shot, seed, support, query, cache_hash(path))


def save_episode(path: str | Path, episode: Episode) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(episode.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_episode(path: str | Path) -> Episode:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Episode(
            k_shot=int(data["k_shot"]),
            seed=int(data["seed"]),
            support={int(k): list(map(int, v)) for k, v in data["support"].items()},
            query=list(map(int, data["query"])),
            cache_hash=data["cache_hash"],
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"unreadable episode file {path}: {e}") from e


def episode_views(cache: FeatureCache, episode: Episode):
    """(support_x, support_y, query_x, query_y) as float64 / int arrays."""
    feats = cache.float64_features()
    labels = cache.labels.astype(np.int64)
    sup_idx = episode.support_indices
    if len(set(map(int, sup_idx))) != len(sup_idx):
        raise EpisodeError("support indices overlap across classes")
    q_idx = np.asarray(episode.query)
    if np.intersect1d(sup_idx, q_idx).size:
        raise EpisodeError("support and query sets overlap")
    return feats[sup_idx], labels[sup_idx], feats[q_idx], labels[q_idx]


# -- synthetic hierarchy generator -------------------------------------------


@dataclass(frozen=True)
class HierarchySpec:
    """Tree-structured Gaussian features: class mean = sum of per-node
    offsets along the root-to-leaf path, with decaying per-level scales."""

    depth: int = 2
    branching: int = 3
    dim: int = 256
    level_scales: tuple[float, ...] = (8.0, 1.0)
    noise_scale: float = 2.5
    nuisance_dims: int = 64
    rotation_seed: int = 7

    def __post_init__(self):
        if self.depth < 1 or self.branching < 2:
            raise EpisodeError("need depth >= 1 and branching >= 2")
        if len(self.level_scales) != self.depth:
            raise EpisodeError(
                f"level_scales has {len(self.level_scales)} entries for depth {self.depth}"
            )
        if not (0 <= self.nuisance_dims < self.dim):
            raise EpisodeError("nuisance_dims must leave at least one informative dim")

    @property
    def num_classes(self) -> int:
        return self.branching**self.depth

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "branching": self.branching,
            "dim": self.dim,
            "level_scales": list(self.level_scales),
            "noise_scale": self.noise_scale,
            "nuisance_dims": self.nuisance_dims,
            "rotation_seed": self.rotation_seed,
        }


def _leaf_paths(spec: HierarchySpec) -> list[tuple[int, ...]]:
    paths = [()]
    for _ in range(spec.depth):
        paths = [p + (b,) for p in paths for b in range(spec.branching)]
    return paths


def hierarchy_class_means(spec: HierarchySpec, seed: int) -> np.ndarray:
    """Class means in the informative subspace, one row per leaf class."""
    d_inf = spec.dim - spec.nuisance_dims
    offsets: dict[tuple[int, ...], np.ndarray] = {}
    means = []
    for path in _leaf_paths(spec):
        mean = np.zeros(d_inf)
        for level in range(1, spec.depth + 1):
            node = path[:level]
            if node not in offsets:
                rng = stream_rng("offset", seed, level, *node)
                offsets[node] = rng.normal(0.0, spec.level_scales[level - 1], size=d_inf)
            mean = mean + offsets[node]
        means.append(mean)
    return np.stack(means)


def generate_hierarchy(spec: HierarchySpec, n_per_class: int, seed: int) -> FeatureCache:
    """Synthetic features with latent tree structure, mixed by a fixed rotation."""
    if n_per_class < 1:
        raise EpisodeError(f"n_per_class must be >= 1, got {n_per_class}")
    d_inf = spec.dim - spec.nuisance_dims
    means = hierarchy_class_means(spec, seed)
    paths = _leaf_paths(spec)
    rows, labels = [], []
    for k, mean in enumerate(means):
        rng = stream_rng("samples", seed, k)
        informative = mean + spec.noise_scale * rng.normal(size=(n_per_class, d_inf))
        nuisance = spec.noise_scale * rng.normal(size=(n_per_class, spec.nuisance_dims))
        rows.append(np.concatenate([informative, nuisance], axis=1))
        labels.extend([k] * n_per_class)
    data = np.concatenate(rows, axis=0)

    rot_rng = stream_rng("rotation", spec.rotation_seed)
    q, r = np.linalg.qr(rot_rng.normal(size=(spec.dim, spec.dim)))
    q *= np.sign(np.diag(r))  # fix the sign ambiguity so the rotation is unique
    data = data @ q

    class_names = ["/".join(f"b{b}" for b in path) for path in paths]
    provenance = {
        "kind": "synthetic-hierarchy",
        "generator_seed": seed,
        "n_per_class": n_per_class,
        "spec": spec.to_dict(),
    }
    return FeatureCache(data.astype(np.float32), np.array(labels, dtype=np.uint32),
                        class_names, provenance)
