"""Image-sequence assembly, on-disk loading, augmentation, and fold planning.

A dataset is a CSV manifest (``path,plant_id,species,class,session,angle``)
plus one binary PPM per (plant, session, angle). One ImageSequence collects
the session-ordered frames of a single plant seen from a single angle.

Augmentation draws one geometric transform per sequence and applies it
identically to every frame; Gaussian noise uses sigma = 15% of the maximum
pixel intensity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .metrics import CLASSES
from .ppm import image_to_unit, read_ppm
from .tensor import RngStream, gaussian_sample

__all__ = [
    "MAX_SESSIONS",
    "NOISE_SIGMA_SCALE",
    "ImageSequence",
    "ManifestRow",
    "AugmentPolicy",
    "AugmentParams",
    "FoldPlan",
    "write_manifest",
    "read_manifest",
    "load_dataset",
    "noise_sigma",
    "draw_augment_params",
    "apply_affine_frame",
    "augment_sequence",
    "perturb_test_sequence",
    "stratified_kfold",
    "truncate_sessions",
]

MAX_SESSIONS = 32
NOISE_SIGMA_SCALE = 0.15
MANIFEST_HEADER = ["path", "plant_id", "species", "class", "session", "angle"]


@dataclass
class ImageSequence:
    """Session-ordered (3, H, W) frames of one plant from one angle."""

    frames: list
    label: str
    plant_id: str
    angle_index: int
    session_indices: list
    species: str = "synthetic"
    augment_params: "AugmentParams | None" = None

    def __post_init__(self):
        if self.label not in CLASSES:
            raise ValueError(f"label {self.label!r} not in {CLASSES}")
        if len(self.frames) != len(self.session_indices):
            raise ValueError("frames and session_indices must align")
        if any(b <= a for a, b in zip(self.session_indices, self.session_indices[1:])):
            raise ValueError("session_indices must be strictly ascending")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def label_index(self) -> int:
        return CLASSES.index(self.label)

    def stacked(self) -> np.ndarray:
        return np.stack(self.frames)


@dataclass(frozen=True)
class ManifestRow:
    path: str
    plant_id: str
    species: str
    class_name: str
    session: int
    angle: int


def write_manifest(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow([r.path, r.plant_id, r.species, r.class_name, r.session, r.angle])


def read_manifest(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: bad manifest header {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_HEADER):
                raise ValueError(f"{path} row {lineno}: expected {len(MANIFEST_HEADER)} fields")
            try:
                rows.append(ManifestRow(
                    path=rec[0], plant_id=rec[1], species=rec[2], class_name=rec[3],
                    session=int(rec[4]), angle=int(rec[5]),
                ))
            except ValueError as exc:
                raise ValueError(f"{path} row {lineno}: {exc}") from None
    return rows


def load_dataset(manifest_path) -> list:
    """One ImageSequence per (plant, angle), frames in ascending session order.

    Pixel values are scaled to [0, 1]; missing files and inconsistent frame
    sizes are rejected with the offending manifest row number.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    rows = read_manifest(manifest_path)
    groups: dict = {}
    for lineno, row in enumerate(rows, start=2):
        groups.setdefault((row.class_name, row.plant_id, row.angle), []).append((lineno, row))

    sequences = []
    for (class_name, plant_id, angle), members in sorted(groups.items()):
        members.sort(key=lambda m: m[1].session)
        frames, session_indices = [], []
        species = members[0][1].species
        shape = None
        for lineno, row in members:
            file_path = root / row.path
            if not file_path.exists():
                raise FileNotFoundError(f"{manifest_path} row {lineno}: missing file {row.path}")
            if row.class_name != class_name or row.species != species:
                raise ValueError(f"{manifest_path} row {lineno}: inconsistent class/species "
                                 f"for plant {plant_id}")
            frame = image_to_unit(read_ppm(file_path))
            if shape is None:
                shape = frame.shape
            elif frame.shape != shape:
                raise ValueError(f"{manifest_path} row {lineno}: image size {frame.shape} "
                                 f"differs from {shape}")
            frames.append(frame)
            session_indices.append(row.session)
        sequences.append(ImageSequence(
            frames=frames, label=class_name, plant_id=plant_id,
            angle_index=angle, session_indices=session_indices, species=species,
        ))
    return sequences


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def noise_sigma(max_intensity: float) -> float:
    """Noise standard deviation rule: 15% of the maximum pixel intensity."""
    return NOISE_SIGMA_SCALE * max_intensity


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    rotation_deg: float = 15.0
    shear_deg: float = 10.0
    translate_px: float = 8.0
    noise_prob: float = 0.1
    max_intensity: float = 1.0

    @property
    def sigma(self) -> float:
        return noise_sigma(self.max_intensity)


IDENTITY_POLICY = AugmentPolicy(flip_prob=0.0, rotation_deg=0.0, shear_deg=0.0,
                                translate_px=0.0, noise_prob=0.0)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    rotation_deg: float
    shear_deg: float
    tx: float
    ty: float
    add_noise: bool

    @property
    def is_identity(self) -> bool:
        return (not self.flip and self.rotation_deg == 0.0 and self.shear_deg == 0.0
                and self.tx == 0.0 and self.ty == 0.0)


def draw_augment_params(policy: AugmentPolicy, rng: RngStream) -> AugmentParams:
    """One transform draw; the draw order is fixed so streams stay aligned."""
    flip = bool(rng.random() < policy.flip_prob)
    rotation = float(rng.uniform(-policy.rotation_deg, policy.rotation_deg))
    shear = float(rng.uniform(-policy.shear_deg, policy.shear_deg))
    tx = float(rng.uniform(-policy.translate_px, policy.translate_px))
    ty = float(rng.uniform(-policy.translate_px, policy.translate_px))
    add_noise = bool(rng.random() < policy.noise_prob)
    return AugmentParams(flip, rotation, shear, tx, ty, add_noise)


def _affine_matrix(params: AugmentParams, height: int, width: int):
    """Inverse-map matrix/offset in (row, col) coordinates for scipy."""
    phi = math.radians(params.rotation_deg)
    psi = math.radians(params.shear_deg)
    rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    shear = np.array([[1.0, 0.0], [math.tan(psi), 1.0]])
    flip = np.array([[1.0, 0.0], [0.0, -1.0 if params.flip else 1.0]])
    m = rot @ shear @ flip
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    t = np.array([params.ty, params.tx])
    m_inv = np.linalg.inv(m)
    offset = center - m_inv @ (center + t)
    return m_inv, offset


def apply_affine_frame(frame: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Warp one (3, H, W) frame: bilinear resampling with edge clamping."""
    if params.is_identity:
        return frame.copy()
    _, h, w = frame.shape
    m_inv, offset = _affine_matrix(params, h, w)
    out = np.empty_like(frame)
    for ch in range(frame.shape[0]):
        out[ch] = ndimage.affine_transform(frame[ch], m_inv, offset=offset, order=1,
                                           mode="nearest")
    return out


def augment_sequence(seq: ImageSequence, policy: AugmentPolicy, rng: RngStream) -> ImageSequence:
    """One geometric draw applied to every frame, plus optional Gaussian noise.

    The draw is recorded on the returned sequence's ``augment_params``.
    """
    params = draw_augment_params(policy, rng)
    frames = [apply_affine_frame(f, params) for f in seq.frames]
    if params.add_noise:
        sigma = policy.sigma
        frames = [np.clip(f + gaussian_sample(rng, 0.0, sigma, f.shape), 0.0, 1.0)
                  for f in frames]
    return replace(seq, frames=frames, augment_params=params)


def perturb_test_sequence(seq: ImageSequence, k: int, rng: RngStream,
                          sigma: float | None = None) -> ImageSequence:
    """Add Gaussian noise to exactly k distinct frames, chosen uniformly."""
    if not 1 <= k <= len(seq):
        raise ValueError(f"k must be in 1..{len(seq)}, got {k}")
    if sigma is None:
        sigma = noise_sigma(1.0)
    chosen = sorted(int(i) for i in rng.choice_without_replacement(len(seq), k))
    frames = [f.copy() for f in seq.frames]
    for i in chosen:
        frames[i] = np.clip(frames[i] + gaussian_sample(rng, 0.0, sigma, frames[i].shape),
                            0.0, 1.0)
    return replace(seq, frames=frames)


# ---------------------------------------------------------------------------
# folds and truncation
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    """Stratified fold assignment per sequence for one repeat."""

    k: int
    repeat: int
    assignments: np.ndarray  # fold index per sequence

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_kfold(sequences, k: int = 5, seed: int = 0, repeat: int = 0) -> FoldPlan:
    """Disjoint, exhaustive folds with per-class counts differing by <= 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = [seq.label for seq in sequences]
    assignments = np.full(len(sequences), -1, dtype=np.int64)
    rng = RngStream(seed).derive("kfold", repeat)
    for class_name in CLASSES:
        idx = np.flatnonzero(np.array(labels, dtype=object) == class_name)
        if idx.size == 0:
            continue
        if idx.size < k:
            raise ValueError(f"class {class_name} has {idx.size} sequences, fewer than k={k}")
        perm = rng.derive(class_name).permutation(idx.size)
        for pos, seq_i in enumerate(idx[perm]):
            assignments[seq_i] = pos % k
    if (assignments < 0).any():
        raise ValueError("sequence with unknown label")
    return FoldPlan(k=k, repeat=repeat, assignments=assignments)


def truncate_sessions(seq: ImageSequence, n: int) -> ImageSequence:
    """Keep only frames with session index <= n."""
    if not 1 <= n <= MAX_SESSIONS:
        raise ValueError(f"n must be in 1..{MAX_SESSIONS}, got {n}")
    keep = [i for i, s in enumerate(seq.session_indices) if s <= n]
    return replace(
        seq,
        frames=[seq.frames[i] for i in keep],
        session_indices=[seq.session_indices[i] for i in keep],
    )
