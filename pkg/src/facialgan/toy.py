"""Synthetic face generator for desk-scale runs.

CelebA-HQ is license-gated, so tests and smoke trainings use procedurally
drawn faces: a skin ellipse with eyes, brows, nose and mouth regions whose
geometry and palette vary per sample. Masks are written with raw
CelebAMask-HQ class ids so the remapping path is exercised end to end.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import RAW_CLASS_NAMES, encode_image, encode_index_grid

_RAW = {name: i for i, name in enumerate(RAW_CLASS_NAMES)}


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def draw_toy_face(sample_seed, size: int = 64,
                  gender: int | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Render one synthetic face: (H×W×3 uint8 image, H×W uint8 raw mask, gender)."""
    rng = np.random.default_rng(sample_seed)
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    if gender is None:
        gender = int(rng.integers(0, 2))
    mask = np.zeros((size, size), dtype=np.uint8)
    img = np.zeros((size, size, 3), dtype=np.float64)

    bg = rng.uniform(30, 110, size=3)
    img[:] = bg + np.linspace(-12, 12, size)[:, None, None]

    cy = 34 * s + rng.uniform(-2, 2) * s
    cx = 32 * s + rng.uniform(-2, 2) * s
    face_ry = rng.uniform(20, 24) * s
    face_rx = rng.uniform(15, 19) * s

    # hair cap (raw "hair" remaps to background); women get longer side hair
    hair_color = rng.uniform(20, 90, size=3)
    hair_ry = face_ry * (1.25 if gender == 0 else 1.05)
    hair_rx = face_rx * (1.35 if gender == 0 else 1.1)
    hair = _ellipse(yy, xx, cy - 4 * s, cx, hair_ry, hair_rx)
    mask[hair] = _RAW["hair"]
    img[hair] = hair_color

    skin_base = rng.uniform(140, 215)
    skin_color = np.array([skin_base, skin_base * rng.uniform(0.72, 0.85),
                           skin_base * rng.uniform(0.55, 0.7)])
    if gender == 1:
        skin_color *= rng.uniform(0.8, 0.92)  # darker tone family for males
    face = _ellipse(yy, xx, cy, cx, face_ry, face_rx)
    mask[face] = _RAW["skin"]
    img[face] = skin_color + rng.uniform(-6, 6, size=3)

    eye_dx = rng.uniform(6.5, 8.5) * s
    eye_cy = cy - rng.uniform(5, 7) * s
    eye_ry = rng.uniform(1.6, 2.6) * s
    eye_rx = rng.uniform(2.6, 3.8) * s
    eye_color = rng.uniform(15, 80, size=3)
    for side, raw_eye, raw_brow in ((-1, "l_eye", "l_brow"), (1, "r_eye", "r_brow")):
        ex = cx + side * eye_dx
        brow = _ellipse(yy, xx, eye_cy - 3.2 * s, ex, 1.1 * s, eye_rx + 0.8 * s)
        mask[brow] = _RAW[raw_brow]
        img[brow] = hair_color * 0.8
        eye = _ellipse(yy, xx, eye_cy, ex, eye_ry, eye_rx)
        mask[eye] = _RAW[raw_eye]
        img[eye] = eye_color

    nose_cy = cy + rng.uniform(1, 3) * s
    nose = _ellipse(yy, xx, nose_cy, cx, rng.uniform(3.2, 4.5) * s, rng.uniform(1.8, 2.8) * s)
    mask[nose] = _RAW["nose"]
    img[nose] = skin_color * 0.82

    mouth_cy = cy + rng.uniform(9, 12) * s
    mouth_ry = rng.uniform(2.0, 3.4) * s
    mouth_rx = rng.uniform(4.5, 7.0) * s
    mouth_color = np.array([rng.uniform(130, 200), rng.uniform(30, 70), rng.uniform(40, 80)])
    mouth = _ellipse(yy, xx, mouth_cy, cx, mouth_ry, mouth_rx)
    upper = mouth & (yy < mouth_cy - mouth_ry / 3)
    lower = mouth & (yy > mouth_cy + mouth_ry / 3)
    mask[mouth] = _RAW["mouth"]
    mask[upper] = _RAW["u_lip"]
    mask[lower] = _RAW["l_lip"]
    img[mouth] = mouth_color
    img[upper] = mouth_color * 0.85
    img[lower] = mouth_color * 1.1

    if gender == 1:  # beard band under the mouth
        beard = face & (yy > mouth_cy + mouth_ry + 1.5 * s)
        img[beard] = hair_color * 0.9

    img += rng.normal(0, 2.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), mask, gender


def make_toy_dataset(root: str | Path, n: int = 16, image_size: int = 64, seed: int = 0) -> Path:
    """Write n synthetic samples in the standard dataset layout; returns root."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        # alternate genders so any split of any size sees both domains
        img, mask, gender = draw_toy_face([seed, i], size=image_size, gender=i % 2)
        sample_id = f"{i:05d}"
        (root / "images" / f"{sample_id}.png").write_bytes(encode_image(img))
        (root / "masks" / f"{sample_id}.png").write_bytes(encode_index_grid(mask))
        rows.append((sample_id, gender))
    with open(root / "attributes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "male"])
        writer.writerows(rows)
    return root
