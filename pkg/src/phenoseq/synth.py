"""Synthetic progressive water-stress dataset generator.

Each plant is planned once as a small 3-d branching skeleton with a growth
timetable; the eight camera angles are orthographic projections of the same
skeleton at 45-degree azimuth steps, and the 32 sessions sample its growth.
The three classes share one geometry stream per plant slot, so renders are
pixel-identical across classes until the class's stress onset. After onset a
stressed plant grows slower, its foliage shifts toward yellow, and leaves
drop progressively - so class divergence only accumulates with time.

Images are 8-bit binary PPM under <root>/<species>/<class>/<plant_id>/,
indexed by a CSV manifest. Everything is deterministic in the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ManifestRow, write_manifest
from .metrics import CLASSES
from .ppm import unit_to_image, write_ppm
from .tensor import RngStream

__all__ = ["STRESS_ONSETS", "generate_synthetic", "plan_plant", "render_frame"]

# Session at which each watering regime starts to show: young-seedling stress
# appears early, before-flowering stress late, control never.
STRESS_ONSETS = {"BF": 18, "C": None, "YS": 10}

STRESS_GROWTH_LIMIT = 5.0   # extra effective growth sessions after onset
STRESS_GROWTH_SPAN = 10.0   # sessions over which that residual growth happens
YELLOW_SESSIONS = 20.0     # sessions from onset to fully yellowed foliage
DROP_SESSIONS = 24.0       # sessions from onset to maximum leaf drop
DROP_MAX = 0.85            # fraction of leaves lost at full stress

BACKGROUND = np.array([0.92, 0.92, 0.88])
POT_COLOR = np.array([0.13, 0.11, 0.10])
POT_RIM = np.array([0.20, 0.17, 0.15])
SOIL_COLOR = np.array([0.23, 0.16, 0.11])
STEM_COLOR = np.array([0.33, 0.27, 0.15])
STEM_STRESSED = np.array([0.42, 0.34, 0.18])
LEAF_GREEN = np.array([0.16, 0.42, 0.10])
LEAF_YELLOW = np.array([0.78, 0.70, 0.16])


@dataclass
class Leaf:
    frac: float          # position along its branch
    radius: float        # full radius, as a fraction of image size
    shade: float         # per-leaf green variation
    drop_u: float        # order statistic deciding when the leaf drops
    offset: np.ndarray   # small 3-d jitter off the branch axis


@dataclass
class Branch:
    attach_frac: float   # attachment height along the stem
    direction: np.ndarray
    length: float        # full length, fraction of image size
    birth: float         # session at which the branch starts growing
    duration: float      # sessions to full length
    leaves: list


@dataclass
class PlantPlan:
    height: float            # full stem height, fraction of image size
    stem_nodes: np.ndarray   # (K, 3) polyline, y from 0 to height
    stem_growth_sessions: float
    branches: list


def plan_plant(rng: RngStream) -> PlantPlan:
    """Draw one plant's full growth plan; class never touches this stream."""
    height = float(rng.uniform(0.5, 0.68))
    k = 7
    wobble = rng.normal(0.0, 0.02, (k - 1, 2)).cumsum(axis=0)
    nodes = np.zeros((k, 3))
    nodes[1:, 0] = wobble[:, 0]
    nodes[1:, 2] = wobble[:, 1]
    nodes[:, 1] = np.linspace(0.0, height, k)
    stem_growth = float(rng.uniform(20.0, 26.0))

    branches = []
    n_branches = int(rng.integers(7, 11))
    for _ in range(n_branches):
        attach = float(rng.uniform(0.12, 0.85))
        azimuth = float(rng.uniform(0.0, 2.0 * math.pi))
        elevation = float(rng.uniform(0.45, 1.05))
        direction = np.array([
            math.cos(elevation) * math.cos(azimuth),
            math.sin(elevation),
            math.cos(elevation) * math.sin(azimuth),
        ])
        length = float(rng.uniform(0.16, 0.30))
        birth = 1.5 + attach * (stem_growth - 6.0) + float(rng.uniform(-1.5, 1.5))
        duration = float(rng.uniform(5.0, 8.0))
        leaves = []
        for _ in range(int(rng.integers(4, 8))):
            leaves.append(Leaf(
                frac=float(rng.uniform(0.25, 1.0)),
                radius=float(rng.uniform(0.018, 0.034)),
                shade=float(rng.uniform(-0.25, 0.25)),
                drop_u=float(rng.uniform(0.0, 1.0)),
                offset=rng.normal(0.0, 0.008, 3),
            ))
        branches.append(Branch(attach, direction, length, birth, duration, leaves))
    return PlantPlan(height, nodes, stem_growth, branches)


# ---------------------------------------------------------------------------
# stress timeline
# ---------------------------------------------------------------------------

def _effective_session(session: float, onset) -> float:
    """Growth clock: advances normally, slows after onset, then stalls for good."""
    if onset is None or session <= onset:
        return float(session)
    return onset + STRESS_GROWTH_LIMIT * min(1.0, (session - onset) / STRESS_GROWTH_SPAN)


def _yellow_frac(session: float, onset) -> float:
    if onset is None or session <= onset:
        return 0.0
    return min(1.0, (session - onset) / YELLOW_SESSIONS)


def _drop_frac(session: float, onset) -> float:
    if onset is None or session <= onset:
        return 0.0
    return min(DROP_MAX, (session - onset) / DROP_SESSIONS)


# ---------------------------------------------------------------------------
# rasterizer
# ---------------------------------------------------------------------------

def _blend_coverage(img, r0, c0, coverage, color):
    h, w = coverage.shape
    region = img[r0 : r0 + h, c0 : c0 + w]
    cov = coverage[..., None]
    region *= 1.0 - cov
    region += color * cov


def _draw_disk(img, row, col, radius, color):
    size = img.shape[0]
    r0 = max(0, int(math.floor(row - radius - 1)))
    r1 = min(size, int(math.ceil(row + radius + 2)))
    c0 = max(0, int(math.floor(col - radius - 1)))
    c1 = min(size, int(math.ceil(col + radius + 2)))
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.ogrid[r0:r1, c0:c1]
    dist = np.sqrt((rr - row) ** 2 + (cc - col) ** 2)
    coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    _blend_coverage(img, r0, c0, coverage, color)


def _draw_segment(img, p0, p1, width, color):
    size = img.shape[0]
    pad = width / 2 + 1.5
    r0 = max(0, int(math.floor(min(p0[0], p1[0]) - pad)))
    r1 = min(size, int(math.ceil(max(p0[0], p1[0]) + pad + 1)))
    c0 = max(0, int(math.floor(min(p0[1], p1[1]) - pad)))
    c1 = min(size, int(math.ceil(max(p0[1], p1[1]) + pad + 1)))
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.meshgrid(np.arange(r0, r1, dtype=float), np.arange(c0, c1, dtype=float),
                         indexing="ij")
    d = np.array(p1) - np.array(p0)
    den = float(d @ d)
    if den == 0.0:
        _draw_disk(img, p0[0], p0[1], width / 2, color)
        return
    t = np.clip(((rr - p0[0]) * d[0] + (cc - p0[1]) * d[1]) / den, 0.0, 1.0)
    dist = np.sqrt((rr - (p0[0] + t * d[0])) ** 2 + (cc - (p0[1] + t * d[1])) ** 2)
    coverage = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
    _blend_coverage(img, r0, c0, coverage, color)


def _stem_point(plan: PlantPlan, frac: float) -> np.ndarray:
    """3-d point at a fraction of the full stem polyline."""
    k = plan.stem_nodes.shape[0]
    x = frac * (k - 1)
    lo = min(int(x), k - 2)
    t = x - lo
    return (1 - t) * plan.stem_nodes[lo] + t * plan.stem_nodes[lo + 1]


def render_frame(plan: PlantPlan, class_name: str, session: int, angle_index: int,
                 size: int, n_angles: int = 8) -> np.ndarray:
    """Render one (H, W, 3) float frame in [0, 1]."""
    onset = STRESS_ONSETS[class_name]
    theta = 2.0 * math.pi * angle_index / n_angles
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    img = np.empty((size, size, 3))
    img[:] = BACKGROUND
    # pot with rim and soil
    pot_h = int(round(0.16 * size))
    pot_top = size - pot_h
    for i, r in enumerate(range(pot_top, size)):
        frac = i / max(pot_h - 1, 1)
        half = 0.5 * (0.44 - 0.14 * frac) * size
        c0, c1 = int(round(size / 2 - half)), int(round(size / 2 + half))
        img[r, c0:c1] = POT_RIM if i < 2 else POT_COLOR
    soil_half = int(round(0.19 * size))
    img[pot_top : pot_top + max(1, size // 32), size // 2 - soil_half : size // 2 + soil_half] = SOIL_COLOR

    origin_row = pot_top
    origin_col = size / 2

    def project(p3):
        px = p3[0] * cos_t + p3[2] * sin_t
        return (origin_row - p3[1] * size, origin_col + px * size)

    s_eff = _effective_session(session, onset)
    yellow = _yellow_frac(session, onset)
    drop = _drop_frac(session, onset)
    scale = size / 64.0

    # stem, grown to its current height with a tapered width
    h_frac = min(1.0, (s_eff / plan.stem_growth_sessions) ** 0.9)
    stem_color = STEM_COLOR + (STEM_STRESSED - STEM_COLOR) * yellow
    n_seg = plan.stem_nodes.shape[0] - 1
    for i in range(n_seg):
        f0, f1 = i / n_seg, (i + 1) / n_seg
        if f0 >= h_frac:
            break
        f1 = min(f1, h_frac)
        w0 = (2.3 - 1.1 * f0) * scale
        _draw_segment(img, project(_stem_point(plan, f0)), project(_stem_point(plan, f1)),
                      w0, stem_color)

    for br in plan.branches:
        if h_frac < br.attach_frac * 0.95:
            continue
        progress = (s_eff - br.birth) / br.duration
        if progress <= 0.0:
            continue
        progress = min(1.0, progress)
        base = _stem_point(plan, br.attach_frac)
        tip = base + br.direction * br.length * progress
        _draw_segment(img, project(base), project(tip), 1.1 * scale, stem_color)
        for leaf in br.leaves:
            if leaf.frac > progress + 1e-9:
                continue
            if leaf.drop_u < drop:
                continue
            appear = br.birth + leaf.frac * br.duration
            grown = min(1.0, 0.3 + (s_eff - appear) / 3.0)
            if grown <= 0.0:
                continue
            # leaf nodes sit at fixed positions; growth reveals them in order,
            # so a stressed plant's foliage is a subset of its control twin's
            pos = base + br.direction * br.length * leaf.frac + leaf.offset
            radius = leaf.radius * grown * size
            green = LEAF_GREEN * (1.0 + leaf.shade * np.array([0.3, 0.5, 0.3]))
            color = green + (LEAF_YELLOW - green) * yellow
            row, col = project(pos)
            _draw_disk(img, row, col, radius, np.clip(color, 0.0, 1.0))

    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def generate_synthetic(out_root, seed: int = 42, n_plants_per_class: int = 5,
                       sessions: int = 32, angles: int = 8, size: int = 64,
                       species: str = "synthetic"):
    """Render the full dataset to disk. Returns the manifest path.

    Produces n_plants_per_class x len(CLASSES) x angles sequences of
    ``sessions`` frames each; byte-identical for identical seeds.
    """
    if n_plants_per_class < 1:
        raise ValueError("n_plants_per_class must be >= 1")
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    rng = RngStream(seed)
    plans = [plan_plant(rng.derive("plant", slot)) for slot in range(n_plants_per_class)]

    rows = []
    for class_name in CLASSES:
        for slot in range(n_plants_per_class):
            plant_id = f"{class_name}{slot:02d}"
            plant_dir = root / species / class_name / plant_id
            plant_dir.mkdir(parents=True, exist_ok=True)
            for session in range(1, sessions + 1):
                for angle in range(angles):
                    frame = render_frame(plans[slot], class_name, session, angle,
                                         size, n_angles=angles)
                    rel = Path(species) / class_name / plant_id / f"s{session:02d}_a{angle}.ppm"
                    write_ppm(root / rel, unit_to_image(frame.transpose(2, 0, 1)))
                    rows.append(ManifestRow(
                        path=str(rel), plant_id=plant_id, species=species,
                        class_name=class_name, session=session, angle=angle,
                    ))
    manifest_path = root / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path
