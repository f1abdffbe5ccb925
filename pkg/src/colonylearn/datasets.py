"""Dataset loading, synthetic colony blobs, and within-colony label noise.

Binary formats handled bit-exactly:

  IDX    big-endian header; images magic 0x00000803 (count, rows, cols),
         labels magic 0x00000801 (count). Pixels are unsigned bytes.
  CIFAR  cifar10 records are 3073 bytes (label + 3072 pixels); cifar100
         records are 3074 bytes (coarse + fine + 3072 pixels).

Pixel features are scaled to [0, 1] at load; per-feature standardization is
a separate explicit step (`standardize_features`). The noise injector
corrupts an exact quota of train labels, always within the original label's
colony, and returns a manifest that replays the corruption.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np

from .sampler import SeededRng
from .taxonomy import Colony, SemanticPrior

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_BLOB_GEOMETRY_TAG = 0x6B1  # spawn key for the seed-stable blob mean layout


class IdxFormatError(ValueError):
    """Malformed IDX bytes; message carries the byte offset."""


class CifarFormatError(ValueError):
    """Malformed CIFAR binary bytes; message carries the byte offset."""


@dataclass
class Dataset:
    features: np.ndarray  # [N, input_dim], float64
    labels: np.ndarray  # [N], int64
    split: str  # "train" or "test"
    provenance: str
    coarse_labels: np.ndarray | None = None  # cifar100 only

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError(f"features must be a non-empty matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class NoiseManifest:
    """Which labels were corrupted, from what, to what."""

    ratio: float
    corrupted_indices: np.ndarray  # sorted
    original_labels: np.ndarray  # aligned with corrupted_indices
    corrupted_labels: np.ndarray

    def to_csv(self) -> str:
        lines = ["index,original,corrupted"]
        for i, o, c in zip(self.corrupted_indices, self.original_labels, self.corrupted_labels):
            lines.append(f"{i},{o},{c}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, ratio: float) -> "NoiseManifest":
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        arr = np.array([[int(v) for v in row] for row in rows], dtype=np.int64)
        arr = arr.reshape(-1, 3)
        return cls(
            ratio=ratio,
            corrupted_indices=arr[:, 0],
            original_labels=arr[:, 1],
            corrupted_labels=arr[:, 2],
        )


def _maybe_gunzip(blob: bytes) -> bytes:
    return gzip.decompress(blob) if blob[:2] == b"\x1f\x8b" else blob


def load_idx(images: bytes, labels: bytes, split: str = "train",
             provenance: str = "idx") -> Dataset:
    """Parse an IDX image/label file pair into flat [0,1] features."""
    images = _maybe_gunzip(images)
    labels = _maybe_gunzip(labels)
    if len(images) < 16:
        raise IdxFormatError(f"image header needs 16 bytes, found {len(images)}")
    magic, count, rows, cols = struct.unpack_from(">IIII", images, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} at byte offset 0 "
            f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
        )
    need = count * rows * cols
    if len(images) - 16 != need:
        raise IdxFormatError(
            f"image payload truncated at byte offset {len(images)}: "
            f"expected {16 + need} bytes total"
        )
    if len(labels) < 8:
        raise IdxFormatError(f"label header needs 8 bytes, found {len(labels)}")
    lmagic, lcount = struct.unpack_from(">II", labels, 0)
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{lmagic:08x} at byte offset 0 "
            f"(expected 0x{IDX_LABELS_MAGIC:08x})"
        )
    if len(labels) - 8 != lcount:
        raise IdxFormatError(
            f"label payload truncated at byte offset {len(labels)}: "
            f"expected {8 + lcount} bytes total"
        )
    if count != lcount:
        raise IdxFormatError(
            f"image count {count} and label count {lcount} disagree"
        )
    pixels = np.frombuffer(images, dtype=np.uint8, offset=16)
    lab = np.frombuffer(labels, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.flatnonzero(lab > 9)
    if bad.size:
        raise IdxFormatError(
            f"label byte {lab[bad[0]]} at byte offset {8 + int(bad[0])} "
            "out of range [0, 10)"
        )
    return Dataset(
        features=pixels.reshape(count, rows * cols).astype(np.float64) / 255.0,
        labels=lab,
        split=split,
        provenance=provenance,
    )


def write_idx(ds: Dataset, rows: int = 1, cols: int | None = None) -> tuple[bytes, bytes]:
    """Fixture writer: inverse of load_idx for byte-valued features."""
    if cols is None:
        cols = ds.input_dim // rows
    if rows * cols != ds.input_dim:
        raise ValueError(f"{rows}x{cols} does not tile input_dim {ds.input_dim}")
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, ds.sample_count, rows, cols) + pixels.tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, ds.sample_count) + ds.labels.astype(np.uint8).tobytes()
    return images, labels


_CIFAR_SPEC = {
    "cifar10": (3073, 1, 9),  # record bytes, label bytes, max label
    "cifar100": (3074, 2, 99),
}


def load_cifar(files, variant: str, split: str = "train") -> Dataset:
    """Parse one or more CIFAR binary blobs; cifar100 keeps coarse labels."""
    if variant not in _CIFAR_SPEC:
        raise ValueError(f"variant must be 'cifar10' or 'cifar100', got {variant!r}")
    rec, label_bytes, max_label = _CIFAR_SPEC[variant]
    if isinstance(files, (bytes, bytearray)):
        files = [files]
    blob = b"".join(_maybe_gunzip(bytes(f)) for f in files)
    if len(blob) == 0 or len(blob) % rec != 0:
        raise CifarFormatError(
            f"{variant} payload of {len(blob)} bytes is not a positive "
            f"multiple of the {rec}-byte record size"
        )
    n = len(blob) // rec
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, rec)
    fine = raw[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(fine > max_label)
    if bad.size:
        raise CifarFormatError(
            f"label byte {fine[bad[0]]} at byte offset "
            f"{int(bad[0]) * rec + label_bytes - 1} out of range [0, {max_label + 1})"
        )
    coarse = None
    if variant == "cifar100":
        coarse = raw[:, 0].astype(np.int64)
        bad = np.flatnonzero(coarse > 19)
        if bad.size:
            raise CifarFormatError(
                f"coarse label byte {coarse[bad[0]]} at byte offset "
                f"{int(bad[0]) * rec} out of range [0, 20)"
            )
    return Dataset(
        features=raw[:, label_bytes:].astype(np.float64) / 255.0,
        labels=fine,
        split=split,
        provenance=f"{variant} binary, {n} records"
        + (", fine labels (coarse retained)" if variant == "cifar100" else ""),
        coarse_labels=coarse,
    )


def write_cifar(ds: Dataset, variant: str) -> bytes:
    """Fixture writer: inverse of load_cifar for byte-valued features."""
    rec, label_bytes, _ = _CIFAR_SPEC[variant]
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    out = np.empty((ds.sample_count, rec), dtype=np.uint8)
    if variant == "cifar100":
        coarse = ds.coarse_labels if ds.coarse_labels is not None else np.zeros(ds.sample_count, np.int64)
        out[:, 0] = coarse.astype(np.uint8)
    out[:, label_bytes - 1] = ds.labels.astype(np.uint8)
    out[:, label_bytes:] = pixels
    return out.tobytes()


def save_npz(ds: Dataset, path) -> None:
    np.savez(path, features=ds.features, labels=ds.labels,
             split=ds.split, provenance=ds.provenance)


def load_npz(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        return Dataset(
            features=z["features"],
            labels=z["labels"],
            split=str(z["split"]),
            provenance=str(z["provenance"]),
        )


def synth_blobs(
    class_count: int,
    colony_sizes,
    per_class: int,
    dim: int,
    separation: float,
    rng: SeededRng,
    split: str = "train",
) -> tuple[Dataset, SemanticPrior]:
    """Unit-variance Gaussian clusters grouped into colonies.

    Colony centers sit on orthonormal directions scaled by `separation`;
    class means add a 0.7*separation offset along further orthonormal
    directions, which keeps same-colony means (0.7*sqrt(2)*separation
    apart) closer to each other than to any cross-colony mean
    (sqrt(2)*sqrt(1+0.49)*separation). separation = 0 collapses every
    class onto one blob.

    The mean layout is derived from the rng's seed lineage, not its stream
    position: successive calls with one rng (e.g. a train split then a test
    split) share the same class geometry and only draw fresh sample noise.
    """
    colony_sizes = [int(s) for s in colony_sizes]
    if sum(colony_sizes) != class_count:
        raise ValueError(
            f"colony sizes {colony_sizes} must sum to class_count {class_count}"
        )
    if any(s < 1 for s in colony_sizes):
        raise ValueError("every colony needs at least one class")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if per_class < 1 or dim < 1:
        raise ValueError("per_class and dim must be >= 1")

    colonies = []
    start = 0
    for gi, size in enumerate(colony_sizes):
        colonies.append(Colony(name=f"colony_{gi}", members=tuple(range(start, start + size))))
        start += size
    prior = SemanticPrior(
        class_count=class_count,
        class_names=tuple(f"class_{i}" for i in range(class_count)),
        colonies=tuple(colonies),
    )

    # Orthonormal directions where dim allows; random unit vectors otherwise.
    geometry_rng = rng.spawn(_BLOB_GEOMETRY_TAG)
    q, _ = np.linalg.qr(geometry_rng.normal((dim, dim)))
    basis = list(q.T)

    def direction(i: int) -> np.ndarray:
        if i < len(basis):
            return basis[i]
        v = geometry_rng.normal(dim)
        return v / np.linalg.norm(v)

    n_col = len(colony_sizes)
    means = np.zeros((class_count, dim))
    for gi, colony in enumerate(colonies):
        center = direction(gi)
        for j, cls in enumerate(colony.members):
            means[cls] = separation * (center + 0.7 * direction(n_col + j))

    feats = np.empty((class_count * per_class, dim))
    labels = np.empty(class_count * per_class, dtype=np.int64)
    for cls in range(class_count):
        block = slice(cls * per_class, (cls + 1) * per_class)
        feats[block] = means[cls] + rng.normal((per_class, dim))
        labels[block] = cls
    ds = Dataset(
        features=feats,
        labels=labels,
        split=split,
        provenance=(
            f"synthetic blobs c={class_count} colonies={colony_sizes} "
            f"per_class={per_class} dim={dim} separation={separation}"
        ),
    )
    return ds, prior


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def inject_colony_noise(
    ds: Dataset, prior: SemanticPrior, ratio: float, rng: SeededRng
) -> tuple[Dataset, NoiseManifest]:
    """Replace an exact quota of train labels within their own colonies.

    Quota is round-half-away-from-zero of ratio*N. Sample indices are drawn
    by rejection over [0, N): repeats and samples whose colony is a
    singleton are redrawn, so singleton-colony samples are never corrupted
    while the quota stays exact. Replacement labels are then drawn in
    ascending index order, uniformly over colony(original) minus the
    original. Features are shared untouched.
    """
    if not 0 <= ratio < 1:
        raise ValueError(f"ratio must lie in [0, 1), got {ratio}")
    if int(ds.labels.max()) >= prior.class_count:
        raise ValueError(
            f"dataset labels reach {int(ds.labels.max())} but the prior has "
            f"{prior.class_count} classes"
        )
    if ratio > 0 and ds.split != "train":
        raise ValueError(f"refusing to corrupt a {ds.split!r} split")
    n = ds.sample_count
    quota = _round_half_away(ratio * n)
    colony_sizes = np.array(
        [len(prior.colony_of(int(lbl)).members) for lbl in range(prior.class_count)]
    )
    eligible = colony_sizes[ds.labels] >= 2
    if quota > int(eligible.sum()):
        raise ValueError(
            f"quota {quota} exceeds the {int(eligible.sum())} samples whose "
            "colony has another member"
        )
    chosen: set[int] = set()
    while len(chosen) < quota:
        i = rng.randint_below(n)
        if i in chosen or not eligible[i]:
            continue
        chosen.add(i)
    indices = np.array(sorted(chosen), dtype=np.int64)
    new_labels = ds.labels.copy()
    originals = ds.labels[indices].copy()
    corrupted = np.empty_like(originals)
    for k, idx in enumerate(indices):
        orig = int(ds.labels[idx])
        pool = [m for m in prior.colony_of(orig).members if m != orig]
        corrupted[k] = pool[rng.randint_below(len(pool))]
        new_labels[idx] = corrupted[k]
    noisy = Dataset(
        features=ds.features,
        labels=new_labels,
        split=ds.split,
        provenance=ds.provenance + f" + colony noise ratio={ratio}",
        coarse_labels=ds.coarse_labels,
    )
    manifest = NoiseManifest(
        ratio=ratio,
        corrupted_indices=indices,
        original_labels=originals,
        corrupted_labels=corrupted,
    )
    return noisy, manifest


def standardize_features(train: Dataset, *others: Dataset, floor: float = 1e-8):
    """Per-feature standardization using train-split statistics.

    Features with std below `floor` are left unscaled (std treated as 1).
    Returns the transformed datasets in the order given, train first.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std < floor, 1.0, std)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(
            features=(ds.features - mean) / std,
            labels=ds.labels,
            split=ds.split,
            provenance=ds.provenance,
            coarse_labels=ds.coarse_labels,
        )

    return [apply(train), *[apply(ds) for ds in others]]
