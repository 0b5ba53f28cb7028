"""Dataset loading, normalization, fold splitting, and two-domain toy synthesis.

On-disk layout::

    <root>/manifest.json
    <root>/<domain>/images/<id>.png   (8/16-bit grayscale) or <id>.raw
    <root>/<domain>/masks/<id>.png    (integer labels)      or <id>.raw

The raw image format is two little-endian uint32 dims (height, width)
followed by height*width little-endian float32 values, row-major. Raw masks
use the same header followed by little-endian uint16 labels.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

IMAGE_EXTENSIONS = (".png", ".raw")


class Domain(Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass
class Image:
    """Single-channel 2D image, normalized to [-1, 1]."""

    pixels: np.ndarray  # (H, W) float32
    domain: Domain
    spacing: tuple[float, float]  # mm per row step, mm per column step
    id: str

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"image '{self.id}' must be 2D, got shape {self.pixels.shape}")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError(f"image '{self.id}' spacing must be positive, got {self.spacing}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
            raise ValueError(f"image '{self.id}' pixels outside [-1, 1]: min={lo}, max={hi}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass
class Mask:
    """Integer label grid; 0 is background, 1..K are foreground classes."""

    labels: np.ndarray  # (H, W) integer
    num_classes: int  # K, foreground classes

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise ValueError(
                f"mask labels must lie in [0, {self.num_classes}], "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )


@dataclass
class FoldSplit:
    """Train/val/test id partition for one cross-validation fold of one domain."""

    fold_index: int
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]

    def all_ids(self) -> list[str]:
        return self.train_ids + self.val_ids + self.test_ids


@dataclass
class DatasetManifest:
    source_domain: str
    target_domain: str
    num_classes: int
    class_names: list[str]
    spacing: tuple[float, float]

    def domain_name(self, domain: Domain) -> str:
        return self.source_domain if domain is Domain.SOURCE else self.target_domain

    @classmethod
    def load(cls, root: Path | str) -> "DatasetManifest":
        path = Path(root) / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"dataset manifest not found: {path}")
        with open(path) as f:
            raw = json.load(f)
        return cls(
            source_domain=raw["source_domain"],
            target_domain=raw["target_domain"],
            num_classes=int(raw["num_classes"]),
            class_names=list(raw["class_names"]),
            spacing=(float(raw["spacing"][0]), float(raw["spacing"][1])),
        )

    def save(self, root: Path | str) -> None:
        payload = {
            "source_domain": self.source_domain,
            "target_domain": self.target_domain,
            "num_classes": self.num_classes,
            "class_names": self.class_names,
            "spacing": list(self.spacing),
        }
        with open(Path(root) / "manifest.json", "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")


def normalize_intensity(raw: np.ndarray) -> np.ndarray:
    """Per-image min-max normalization to [-1, 1].

    Constant images map to all -1 (the min-max denominator is guarded).
    Monotone: pixel ordering is preserved.
    """
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        return np.full(raw.shape, -1.0, dtype=np.float32)
    out = 2.0 * (raw - lo) / (hi - lo) - 1.0
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# File IO


def read_image_file(path: Path | str) -> np.ndarray:
    """Read a grayscale PNG or raw-format image as a float array (unnormalized)."""
    path = Path(path)
    try:
        if path.suffix == ".raw":
            return _read_raw(path, np.dtype("<f4")).astype(np.float64)
        with PILImage.open(path) as im:
            if im.mode not in ("L", "I", "I;16"):
                im = im.convert("I")
            return np.asarray(im, dtype=np.float64)
    except (OSError, struct.error) as exc:
        raise OSError(f"cannot read image file '{path}': {exc}") from exc


def read_mask_file(path: Path | str) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".raw":
            return _read_raw(path, np.dtype("<u2")).astype(np.int64)
        with PILImage.open(path) as im:
            if im.mode not in ("L", "I", "I;16"):
                im = im.convert("I")
            arr = np.asarray(im)
    except (OSError, struct.error) as exc:
        raise OSError(f"cannot read mask file '{path}': {exc}") from exc
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"mask file '{path}' is not integer-valued")
    return arr.astype(np.int64)


def _read_raw(path: Path, dtype: np.dtype) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < 8:
        raise OSError(f"raw file '{path}' truncated (no header)")
    h, w = struct.unpack("<II", data[:8])
    expected = 8 + h * w * dtype.itemsize
    if len(data) != expected:
        raise OSError(f"raw file '{path}' has {len(data)} bytes, expected {expected} for {h}x{w}")
    return np.frombuffer(data[8:], dtype=dtype).reshape(h, w)


def write_image_raw(path: Path | str, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def write_mask_raw(path: Path | str, labels: np.ndarray) -> None:
    arr = np.asarray(labels, dtype="<u2")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def write_image_png(path: Path | str, pixels: np.ndarray) -> None:
    """Write a [-1, 1] float image as 16-bit grayscale PNG."""
    scaled = np.clip((np.asarray(pixels, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    arr = np.round(scaled * 65535.0).astype(np.uint16)
    PILImage.fromarray(arr).save(path)  # uint16 -> 16-bit grayscale


def write_mask_png(path: Path | str, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.max() > 255:
        raise ValueError("mask labels exceed 8-bit PNG range")
    PILImage.fromarray(arr.astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# Dataset loading


def load_dataset(
    root: Path | str,
    domain: Domain,
    manifest: DatasetManifest | None = None,
) -> list[tuple[Image, Mask | None]]:
    """Load one domain of a dataset, normalizing images and remapping labels.

    Mask label values are remapped dataset-wide: the sorted distinct raw
    values across all masks of the domain map to contiguous labels 0..K.
    Source-domain images must all have masks; target masks are optional
    (they are only ever read by evaluation code).
    """
    root = Path(root)
    if manifest is None:
        manifest = DatasetManifest.load(root)
    dom_dir = root / manifest.domain_name(domain)
    images_dir = dom_dir / "images"
    masks_dir = dom_dir / "masks"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"missing images directory: {images_dir}")

    image_paths = sorted(p for p in images_dir.iterdir() if p.suffix in IMAGE_EXTENSIONS)
    if not image_paths:
        raise FileNotFoundError(f"no image files found under {images_dir}")

    entries: list[tuple[str, np.ndarray, np.ndarray | None]] = []
    for img_path in image_paths:
        sample_id = img_path.stem
        pixels = normalize_intensity(read_image_file(img_path))
        mask_arr = None
        mask_path = _find_mask(masks_dir, sample_id)
        if mask_path is not None:
            mask_arr = read_mask_file(mask_path)
            if mask_arr.shape != pixels.shape:
                raise ValueError(
                    f"image/mask shape mismatch for id '{sample_id}': "
                    f"{pixels.shape} vs {mask_arr.shape}"
                )
        elif domain is Domain.SOURCE:
            raise FileNotFoundError(
                f"missing mask for source-domain image '{sample_id}' under {masks_dir}"
            )
        entries.append((sample_id, pixels, mask_arr))

    remap = _label_remap([m for _, _, m in entries if m is not None], manifest.num_classes)
    out: list[tuple[Image, Mask | None]] = []
    for sample_id, pixels, mask_arr in entries:
        image = Image(pixels=pixels, domain=domain, spacing=manifest.spacing, id=sample_id)
        mask = None
        if mask_arr is not None:
            mask = Mask(labels=remap[mask_arr], num_classes=manifest.num_classes)
        out.append((image, mask))
    return out


def _find_mask(masks_dir: Path, sample_id: str) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        candidate = masks_dir / f"{sample_id}{ext}"
        if candidate.exists():
            return candidate
    return None


def _label_remap(masks: list[np.ndarray], num_classes: int) -> np.ndarray:
    """Lookup table mapping raw label values to contiguous 0..K."""
    if not masks:
        return np.arange(num_classes + 1, dtype=np.int64)
    values = np.unique(np.concatenate([np.unique(m) for m in masks]))
    if len(values) > num_classes + 1:
        raise ValueError(
            f"masks contain {len(values)} distinct label values "
            f"but manifest declares {num_classes} foreground classes"
        )
    table = np.zeros(int(values.max()) + 1, dtype=np.int64)
    for new, old in enumerate(values):
        table[old] = new
    return table


# ---------------------------------------------------------------------------
# Cross-validation folds


def make_folds(
    ids: list[str],
    num_folds: int,
    seed: int,
    val_fraction: float = 0.2,
) -> list[FoldSplit]:
    """Partition ids into cross-validation folds.

    Every id lands in exactly one test partition across folds; within a fold,
    the validation ids are a val_fraction share of the non-test remainder.
    The same (ids, num_folds, seed) always reproduces the same splits.
    """
    if num_folds < 2:
        raise ValueError(f"num_folds must be >= 2, got {num_folds}")
    if num_folds > len(ids):
        raise ValueError(f"num_folds={num_folds} exceeds dataset size {len(ids)}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")

    rng = np.random.default_rng(seed)
    order = sorted(ids)
    rng.shuffle(order)
    test_chunks = [list(chunk) for chunk in np.array_split(np.asarray(order, dtype=object), num_folds)]

    folds = []
    for fold_index, test_ids in enumerate(test_chunks):
        rest = [i for i in order if i not in set(test_ids)]
        rest = list(rest)
        rng_fold = np.random.default_rng([seed, fold_index])
        rng_fold.shuffle(rest)
        n_val = int(round(val_fraction * len(rest)))
        if val_fraction > 0 and len(rest) > 1:
            n_val = max(1, min(n_val, len(rest) - 1))
        folds.append(
            FoldSplit(
                fold_index=fold_index,
                train_ids=sorted(rest[n_val:]),
                val_ids=sorted(rest[:n_val]),
                test_ids=sorted(test_ids),
            )
        )
    return folds


# ---------------------------------------------------------------------------
# Toy two-domain dataset

TOY_CLASS_NAMES = ["ring", "core", "crescent"]
TOY_NUM_CLASSES = 3


@dataclass
class _ToyShapes:
    """Analytic shape parameters of one toy sample (pixel units)."""

    center: tuple[float, float]  # (row, col)
    r_core: float
    r_ring: float  # outer ring radius, > r_core
    cres_center: tuple[float, float]
    r_cres: float


def _sample_shapes(rng: np.random.Generator, size: int) -> _ToyShapes:
    s = float(size)
    # Ranges chosen so the worst-case reach (ring plus adjacent crescent,
    # 0.22s + 1.45 * 0.115s < 0.39s) fits a 2 px margin for any size >= 32.
    r_core = rng.uniform(0.10, 0.15) * s
    thickness = rng.uniform(0.05, 0.07) * s
    r_ring = r_core + thickness
    r_cres = rng.uniform(0.08, 0.115) * s
    reach = r_ring + 1.45 * r_cres
    lo, hi = reach + 2.0, s - reach - 2.0
    cy = rng.uniform(lo, hi)
    cx = rng.uniform(lo, hi)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    dist = r_ring + 0.45 * r_cres
    cres = (cy + dist * np.sin(theta), cx + dist * np.cos(theta))
    return _ToyShapes(center=(cy, cx), r_core=r_core, r_ring=r_ring, cres_center=cres, r_cres=r_cres)


def _shapes_to_mask(shapes: _ToyShapes, size: int) -> np.ndarray:
    """Rasterize analytic shapes into labels {0=bg, 1=ring, 2=core, 3=crescent}."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d_main = np.hypot(yy - shapes.center[0], xx - shapes.center[1])
    d_cres = np.hypot(yy - shapes.cres_center[0], xx - shapes.cres_center[1])
    core = d_main <= shapes.r_core
    ring = (d_main <= shapes.r_ring) & ~core
    crescent = (d_cres <= shapes.r_cres) & (d_main > shapes.r_ring)
    mask = np.zeros((size, size), dtype=np.int64)
    mask[ring] = 1
    mask[core] = 2
    mask[crescent] = 3
    return mask


def _render_domain_a(rng: np.random.Generator, mask: np.ndarray, size: int) -> np.ndarray:
    """Bright structures on a dark background with a smooth bias field."""
    levels = np.array(
        [
            rng.uniform(0.04, 0.12),  # background
            rng.uniform(0.75, 0.90),  # ring
            rng.uniform(0.50, 0.62),  # core
            rng.uniform(0.82, 0.95),  # crescent
        ]
    )
    img = levels[mask]
    img = gaussian_filter(img, sigma=0.8)
    bias = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 4.0)
    bias = 0.08 * bias / (np.abs(bias).max() + 1e-12)
    img = img + bias + 0.02 * rng.standard_normal((size, size))
    return np.clip(img, 0.0, 1.0) * 2.0 - 1.0


def _render_domain_b(rng: np.random.Generator, mask: np.ndarray, size: int) -> np.ndarray:
    """Inverted contrast with a different global gamma and noise texture.

    The noise amplitudes stay small: the domain gap that defeats a
    no-adaptation segmenter is the contrast inversion and gamma, while the
    translation networks must remain able to render convincing fakes at toy
    training budgets.
    """
    levels = np.array(
        [
            rng.uniform(0.85, 0.96),  # background (bright)
            rng.uniform(0.10, 0.22),  # ring (dark)
            rng.uniform(0.35, 0.48),  # core
            rng.uniform(0.05, 0.16),  # crescent
        ]
    )
    img = levels[mask]
    img = gaussian_filter(img, sigma=0.8)
    gamma = rng.uniform(1.6, 2.3)
    img = np.clip(img, 0.0, 1.0) ** gamma
    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=1.2)
    img = img + 0.02 * texture / (np.abs(texture).max() + 1e-12) + 0.008 * rng.standard_normal((size, size))
    bias = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 5.0)
    img = img + 0.04 * bias / (np.abs(bias).max() + 1e-12)
    return np.clip(img, 0.0, 1.0) * 2.0 - 1.0


def synthesize_toy_dataset(
    n_per_domain: int,
    image_size: int,
    seed: int,
) -> tuple[list[tuple[Image, Mask]], list[tuple[Image, Mask]]]:
    """Generate two unpaired toy domains sharing a content distribution.

    Both domains draw ring/core/crescent composites from the same shape
    distribution but render them with opposite contrast conventions. Both
    carry exact analytic masks; the target-domain masks exist only so that
    evaluation code can score predictions.
    """
    if n_per_domain < 1:
        raise ValueError(f"n_per_domain must be >= 1, got {n_per_domain}")
    if image_size < 32:
        raise ValueError(f"image_size must be >= 32, got {image_size}")

    rng = np.random.default_rng(seed)
    domain_a: list[tuple[Image, Mask]] = []
    domain_b: list[tuple[Image, Mask]] = []
    for domain, renderer, tag, bucket in (
        (Domain.SOURCE, _render_domain_a, "A", domain_a),
        (Domain.TARGET, _render_domain_b, "B", domain_b),
    ):
        for i in range(n_per_domain):
            shapes = _sample_shapes(rng, image_size)
            mask = _shapes_to_mask(shapes, image_size)
            pixels = renderer(rng, mask, image_size).astype(np.float32)
            image = Image(pixels=pixels, domain=domain, spacing=(1.0, 1.0), id=f"{tag}{i:04d}")
            bucket.append((image, Mask(labels=mask, num_classes=TOY_NUM_CLASSES)))
    return domain_a, domain_b


def toy_manifest() -> DatasetManifest:
    return DatasetManifest(
        source_domain="A",
        target_domain="B",
        num_classes=TOY_NUM_CLASSES,
        class_names=list(TOY_CLASS_NAMES),
        spacing=(1.0, 1.0),
    )


def write_dataset(
    root: Path | str,
    manifest: DatasetManifest,
    samples_by_domain: dict[str, list[tuple[Image, Mask | None]]],
) -> None:
    """Write datasets in the documented directory layout (16-bit PNG images)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest.save(root)
    for domain_name, samples in samples_by_domain.items():
        images_dir = root / domain_name / "images"
        masks_dir = root / domain_name / "masks"
        images_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)
        for image, mask in samples:
            write_image_png(images_dir / f"{image.id}.png", image.pixels)
            if mask is not None:
                write_mask_png(masks_dir / f"{image.id}.png", mask.labels)


def hflip(image: Image, mask: Mask | None) -> tuple[Image, Mask | None]:
    """Horizontal flip augmentation (mirror columns)."""
    flipped = Image(
        pixels=np.ascontiguousarray(image.pixels[:, ::-1]),
        domain=image.domain,
        spacing=image.spacing,
        id=image.id,
    )
    if mask is None:
        return flipped, None
    return flipped, Mask(labels=np.ascontiguousarray(mask.labels[:, ::-1]), num_classes=mask.num_classes)
