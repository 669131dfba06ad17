"""Dataset ingestion: image/mask decoding, class remapping, attribute masking, batches.

Dataset layout on disk:
    images/<id>.png      RGB
    masks/<id>.png       8-bit indexed, value = raw class id (CelebAMask-HQ ids 0..18)
    attributes.csv       header `id,male`, values 0/1
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .config import ATTRIBUTE_CHANNELS, NUM_CLASSES
from .errors import DecodeError, EmptySplit, ShapeMismatch, UnknownClass, BadMask

# CelebAMask-HQ raw label ids.
RAW_CLASS_NAMES = (
    "background", "skin", "nose", "eye_g", "l_eye", "r_eye", "l_brow", "r_brow",
    "l_ear", "r_ear", "mouth", "u_lip", "l_lip", "hair", "hat", "ear_r",
    "neck_l", "neck", "cloth",
)
NUM_RAW_CLASSES = len(RAW_CLASS_NAMES)

# raw -> working: eyes absorb brows, mouth absorbs lips, the rest is context.
_RAW_TO_WORKING = {
    "skin": "skin",
    "nose": "nose",
    "l_eye": "eyes", "r_eye": "eyes", "l_brow": "eyes", "r_brow": "eyes",
    "mouth": "mouth", "u_lip": "mouth", "l_lip": "mouth",
}

REMAP_TABLE = np.zeros(NUM_RAW_CLASSES, dtype=np.int64)
for _i, _name in enumerate(RAW_CLASS_NAMES):
    _working = _RAW_TO_WORKING.get(_name, "background")
    REMAP_TABLE[_i] = ("background", "skin", "eyes", "nose", "mouth").index(_working)


def attribute_channel(c) -> int:
    """Channel index of an editable attribute, given by name or index."""
    if isinstance(c, str):
        if c not in ATTRIBUTE_CHANNELS:
            raise ValueError(f"not an editable attribute: {c!r}")
        return ATTRIBUTE_CHANNELS[c]
    c = int(c)
    if c not in ATTRIBUTE_CHANNELS.values():
        raise ValueError(f"not an editable attribute channel: {c}")
    return c


# ---------------------------------------------------------------------------
# decoding / encoding (shared by the dataset loader and the wire format)

def decode_image(data: bytes | str | Path) -> np.ndarray:
    """Decode a PNG/JPEG to an H×W×3 uint8 array."""
    try:
        src = io.BytesIO(data) if isinstance(data, bytes) else data
        with PILImage.open(src) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc


def decode_index_grid(data: bytes | str | Path) -> np.ndarray:
    """Decode an indexed/grayscale PNG to an H×W uint8 class grid."""
    try:
        src = io.BytesIO(data) if isinstance(data, bytes) else data
        with PILImage.open(src) as img:
            if img.mode not in ("P", "L", "I", "I;16"):
                raise DecodeError(f"mask must be indexed or grayscale, got mode {img.mode}")
            arr = np.asarray(img, dtype=np.int64)  # P mode yields raw indices, not palette colors
    except DecodeError:
        raise
    except (OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode mask: {exc}") from exc
    if arr.min() < 0 or arr.max() > 255:
        raise DecodeError("mask values outside 8-bit range")
    return arr.astype(np.uint8)


# Fixed presentation palette for the working classes (index 0..4).
CLASS_PALETTE = (
    (0x00, 0x00, 0x00),  # background
    (0xCC, 0x88, 0x66),  # skin
    (0x00, 0xCC, 0x00),  # eyes
    (0x00, 0x66, 0xFF),  # nose
    (0xCC, 0x00, 0x00),  # mouth
)


def encode_index_grid(grid: np.ndarray) -> bytes:
    """Encode an H×W uint8 class grid as an 8-bit indexed PNG."""
    img = PILImage.fromarray(grid.astype(np.uint8), mode="P")
    palette = list(sum(CLASS_PALETTE, ()))
    palette += [0] * (768 - len(palette))
    img.putpalette(palette)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def encode_image(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# tensor conversions

def image_to_tensor(arr: np.ndarray, image_size: int | None = None) -> torch.Tensor:
    """uint8 H×W×3 -> float32 3×H×W in [-1, 1], bilinear resize to image_size."""
    if image_size is not None and arr.shape[:2] != (image_size, image_size):
        img = PILImage.fromarray(arr, mode="RGB")
        img = img.resize((image_size, image_size), PILImage.BILINEAR)
        arr = np.asarray(img, dtype=np.uint8)
    x = torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0)
    return x.permute(2, 0, 1).contiguous()


def tensor_to_image(x: torch.Tensor) -> np.ndarray:
    """float 3×H×W in [-1, 1] -> uint8 H×W×3."""
    arr = ((x.detach().float().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(1, 2, 0).contiguous().numpy()


def resize_grid(grid: np.ndarray, image_size: int) -> np.ndarray:
    """Nearest-neighbor resize; never invents class values."""
    if grid.shape == (image_size, image_size):
        return grid
    img = PILImage.fromarray(grid.astype(np.uint8), mode="L")
    img = img.resize((image_size, image_size), PILImage.NEAREST)
    return np.asarray(img, dtype=np.uint8)


def remap_classes(raw_mask) -> torch.Tensor:
    """Remap a raw H×W class grid to a one-hot C×H×W working-class mask."""
    if isinstance(raw_mask, torch.Tensor):
        raw_mask = raw_mask.numpy()
    raw_mask = np.asarray(raw_mask)
    if raw_mask.min() < 0 or raw_mask.max() >= NUM_RAW_CLASSES:
        raise UnknownClass(
            f"raw class {int(raw_mask.max() if raw_mask.max() >= NUM_RAW_CLASSES else raw_mask.min())} "
            f"outside table range 0..{NUM_RAW_CLASSES - 1}"
        )
    working = REMAP_TABLE[raw_mask.astype(np.int64)]
    return grid_to_onehot(working)


def grid_to_onehot(grid: np.ndarray) -> torch.Tensor:
    """H×W working-class grid (values 0..C-1) -> one-hot C×H×W float32."""
    grid = np.asarray(grid)
    if grid.min() < 0 or grid.max() >= NUM_CLASSES:
        raise BadMask(f"class index {int(grid.max())} outside 0..{NUM_CLASSES - 1}")
    onehot = torch.from_numpy(np.eye(NUM_CLASSES, dtype=np.float32)[grid.astype(np.int64)])
    return onehot.permute(2, 0, 1).contiguous()


def onehot_to_grid(m: torch.Tensor) -> np.ndarray:
    return m.argmax(dim=0).numpy().astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset index

@dataclass(frozen=True)
class DatasetRecord:
    sample_id: str
    image_path: Path
    mask_path: Path
    gender: int  # 0 = female, 1 = male


@dataclass
class DatasetIndex:
    records: list
    split: str

    def __len__(self):
        return len(self.records)


def split_counts(n: int) -> tuple[int, int, int]:
    """Val/test are 1,000 each at full scale, proportional (min 1) below it."""
    if n >= 30_000:
        return n - 2_000, 1_000, 1_000
    if n < 3:
        return n, 0, 0
    held = max(1, n // 30)
    return n - 2 * held, held, held


def build_index(root: str | Path, split: str = "train") -> DatasetIndex:
    """Index a dataset directory; split by ascending id into train/val/test."""
    root = Path(root)
    attrs = {}
    with open(root / "attributes.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "male"]:
            raise DecodeError(f"attributes.csv header must be id,male, got {reader.fieldnames}")
        for row in reader:
            attrs[row["id"]] = int(row["male"])
    records = []
    for sample_id in sorted(attrs):
        rec = DatasetRecord(
            sample_id=sample_id,
            image_path=root / "images" / f"{sample_id}.png",
            mask_path=root / "masks" / f"{sample_id}.png",
            gender=attrs[sample_id],
        )
        if not rec.image_path.exists() or not rec.mask_path.exists():
            raise DecodeError(f"missing files for sample {sample_id}")
        records.append(rec)
    n_train, n_val, n_test = split_counts(len(records))
    bounds = {
        "train": records[:n_train],
        "val": records[n_train:n_train + n_val],
        "test": records[n_train + n_val:n_train + n_val + n_test],
        "all": records,
    }
    if split not in bounds:
        raise ValueError(f"unknown split {split!r}")
    return DatasetIndex(records=bounds[split], split=split)


# ---------------------------------------------------------------------------
# sample loading

def load_sample(record: DatasetRecord, image_size: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Load one (image, one-hot mask) pair at the working resolution."""
    arr = decode_image(record.image_path)
    grid = decode_index_grid(record.mask_path)
    if arr.shape[:2] != grid.shape:
        raise ShapeMismatch(
            f"image {arr.shape[:2]} vs mask {grid.shape} for sample {record.sample_id}"
        )
    x = image_to_tensor(arr, image_size)
    m = remap_classes(resize_grid(grid, image_size))
    return x, m


class SampleCache:
    """Read-through cache over load_sample; cached tensors are read-only."""

    def __init__(self, image_size: int, max_items: int = 4096):
        self.image_size = image_size
        self.max_items = max_items
        self._store: dict = {}

    def get(self, record: DatasetRecord) -> tuple[torch.Tensor, torch.Tensor]:
        key = record.sample_id
        if key not in self._store:
            if len(self._store) >= self.max_items:
                self._store.pop(next(iter(self._store)))
            self._store[key] = load_sample(record, self.image_size)
        return self._store[key]


# ---------------------------------------------------------------------------
# attribute masking

def mask_attribute(x: torch.Tensor, m: torch.Tensor, c) -> torch.Tensor:
    """Zero the pixels of x covered by attribute c in m (mid-gray in [-1,1])."""
    ch = attribute_channel(c)
    if x.shape[-2:] != m.shape[-2:]:
        raise ShapeMismatch(f"image {tuple(x.shape)} vs mask {tuple(m.shape)}")
    region = m[..., ch:ch + 1, :, :] > 0.5
    return torch.where(region, torch.zeros((), dtype=x.dtype), x)


def mask_attributes_batch(x: torch.Tensor, m: torch.Tensor, channels: torch.Tensor) -> torch.Tensor:
    """Per-sample attribute masking for a batch; channels is an N-vector of class ids."""
    if x.shape[-2:] != m.shape[-2:]:
        raise ShapeMismatch(f"image {tuple(x.shape)} vs mask {tuple(m.shape)}")
    idx = channels.view(-1, 1, 1, 1).expand(-1, 1, x.shape[-2], x.shape[-1])
    region = m.gather(1, idx) > 0.5
    return torch.where(region, torch.zeros((), dtype=x.dtype), x)


# ---------------------------------------------------------------------------
# batches

@dataclass
class TrainingBatch:
    x: torch.Tensor          # N×3×H×W source images
    m: torch.Tensor          # N×C×H×W one-hot masks
    gender: torch.Tensor     # N long
    c_masked: tuple          # per-sample attribute names
    x_masked: torch.Tensor   # N×3×H×W with the chosen attribute zeroed

    @property
    def masked_channels(self) -> torch.Tensor:
        return torch.tensor([attribute_channel(c) for c in self.c_masked], dtype=torch.long)


_ATTR_NAMES = tuple(ATTRIBUTE_CHANNELS)


def make_batch(index: DatasetIndex, batch_size: int, rng_seed,
               image_size: int, cache: SampleCache | None = None) -> TrainingBatch:
    """Assemble a training batch; a pure function of (index, rng_seed)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not index.records:
        raise EmptySplit(f"split {index.split!r} is empty")
    rng = np.random.default_rng(rng_seed)
    picks = rng.integers(0, len(index.records), size=batch_size)
    attrs = tuple(_ATTR_NAMES[i] for i in rng.integers(0, len(_ATTR_NAMES), size=batch_size))
    loader = cache.get if cache is not None else (lambda r: load_sample(r, image_size))
    xs, ms = zip(*(loader(index.records[i]) for i in picks))
    x = torch.stack(xs)
    m = torch.stack(ms)
    gender = torch.tensor([index.records[i].gender for i in picks], dtype=torch.long)
    channels = torch.tensor([attribute_channel(c) for c in attrs], dtype=torch.long)
    x_masked = mask_attributes_batch(x, m, channels)
    return TrainingBatch(x=x, m=m, gender=gender, c_masked=attrs, x_masked=x_masked)
