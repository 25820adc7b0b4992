"""
TrackML-format event input/output and a toy helix event generator.

Events are held column-wise in a pandas DataFrame (one row per hit) with
columns ``hit_id, x, y, z, volume_id, layer_id, module_id, particle_id, pt,
tpx, tpy, tpz``. Noise hits carry particle_id 0 and zero momentum.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import JoinError, SchemaError, SingularityError

HITS_COLUMNS = ["hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id"]
TRUTH_COLUMNS = ["hit_id", "particle_id", "tx", "ty", "tz", "tpx", "tpy", "tpz", "weight"]
PARTICLES_COLUMNS = ["particle_id", "vx", "vy", "vz", "px", "py", "pz", "q", "nhits"]
EVENT_COLUMNS = HITS_COLUMNS + ["particle_id", "pt", "tpx", "tpy", "tpz"]

DEFAULT_LAYER_RADII = (32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0)
DEFAULT_LAYER_LABELS = (
    (8, 2), (8, 4), (8, 6), (8, 8),
    (13, 2), (13, 4), (13, 6), (13, 8),
    (17, 2), (17, 4),
)
# Azimuthal module segmentation used to assign toy module ids.
TOY_MODULES_PER_LAYER = 64


@dataclass(frozen=True)
class Hit:
    hit_id: int
    x: float
    y: float
    z: float
    volume_id: int
    layer_id: int
    module_id: int
    particle_id: int = 0
    pt: float = 0.0


@dataclass
class EventRecord:
    event_id: int
    hits: pd.DataFrame
    particles: Optional[pd.DataFrame] = None

    def __post_init__(self):
        if not self.hits["hit_id"].is_unique:
            raise SchemaError(f"event {self.event_id}: duplicate hit_id")

    def __len__(self):
        return len(self.hits)

    def hit(self, i: int) -> Hit:
        row = self.hits.iloc[i]
        return Hit(
            int(row.hit_id), float(row.x), float(row.y), float(row.z),
            int(row.volume_id), int(row.layer_id), int(row.module_id),
            int(row.particle_id), float(row.pt),
        )

    def hit_list(self) -> list:
        return [self.hit(i) for i in range(len(self.hits))]


def empty_hits() -> pd.DataFrame:
    df = pd.DataFrame({c: pd.Series(dtype="int64") for c in EVENT_COLUMNS})
    for c in ("x", "y", "z", "pt", "tpx", "tpy", "tpz"):
        df[c] = df[c].astype("float64")
    return df


# ---------------------------------------------------------------------------
# Coordinates
# ---------------------------------------------------------------------------

def derived_coords(hit) -> tuple:
    """(r, phi, eta) of a hit; phi in (-pi, pi], eta = asinh(z / r)."""
    x, y, z = float(hit.x), float(hit.y), float(hit.z)
    r = math.hypot(x, y)
    if r == 0.0:
        raise SingularityError(f"hit at ({x}, {y}, {z}) lies on the beam axis")
    phi = math.atan2(y, x)
    if phi == -math.pi:
        phi = math.pi
    return r, phi, math.asinh(z / r)


def cylindrical(hits: pd.DataFrame):
    """Vectorised (r, phi, eta) arrays for a hits table."""
    x = hits["x"].to_numpy(float)
    y = hits["y"].to_numpy(float)
    z = hits["z"].to_numpy(float)
    r = np.hypot(x, y)
    if np.any(r == 0):
        raise SingularityError("hit on the beam axis")
    phi = np.arctan2(y, x)
    phi = np.where(phi == -np.pi, np.pi, phi)
    return r, phi, np.arcsinh(z / r)


# ---------------------------------------------------------------------------
# TrackML CSV input/output
# ---------------------------------------------------------------------------

def _read_csv(path, columns) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return df


def load_trackml_event(hits_path, truth_path, particles_path, event_id: Optional[int] = None) -> EventRecord:
    """Join hits with truth so every hit carries particle_id and truth pt."""
    hits = _read_csv(hits_path, HITS_COLUMNS)[HITS_COLUMNS]
    truth = _read_csv(truth_path, TRUTH_COLUMNS)
    particles = _read_csv(particles_path, PARTICLES_COLUMNS)

    dangling = ~truth["hit_id"].isin(hits["hit_id"])
    if dangling.any():
        bad = truth.loc[dangling, "hit_id"].iloc[0]
        raise JoinError(f"{truth_path}: hit_id {bad} has no entry in {hits_path}")
    if not truth["hit_id"].is_unique:
        raise JoinError(f"{truth_path}: duplicate hit_id")

    merged = hits.merge(
        truth[["hit_id", "particle_id", "tpx", "tpy", "tpz"]], on="hit_id", how="left"
    )
    merged["particle_id"] = merged["particle_id"].fillna(0).astype("int64")
    for c in ("tpx", "tpy", "tpz"):
        merged[c] = merged[c].fillna(0.0).astype(float)
    noise = merged["particle_id"] == 0
    merged.loc[noise, ["tpx", "tpy", "tpz"]] = 0.0
    merged["pt"] = np.hypot(merged["tpx"], merged["tpy"])
    for c in ("hit_id", "volume_id", "layer_id", "module_id"):
        merged[c] = merged[c].astype("int64")
    for c in ("x", "y", "z"):
        merged[c] = merged[c].astype(float)

    if event_id is None:
        event_id = _event_id_from_path(hits_path)
    return EventRecord(int(event_id), merged[EVENT_COLUMNS].reset_index(drop=True), particles)


def _event_id_from_path(path) -> int:
    name = os.path.basename(str(path))
    digits = "".join(ch for ch in name.split("-")[0] if ch.isdigit())
    return int(digits) if digits else 0


def event_paths(directory, event_id: int) -> tuple:
    stem = os.path.join(str(directory), f"event{event_id:09d}")
    return f"{stem}-hits.csv", f"{stem}-truth.csv", f"{stem}-particles.csv"


def load_event_dir(directory, event_id: int) -> EventRecord:
    return load_trackml_event(*event_paths(directory, event_id), event_id=event_id)


def list_events(directory) -> list:
    """Sorted event ids for which a ``*-hits.csv`` file exists."""
    ids = []
    for name in os.listdir(directory):
        if name.startswith("event") and name.endswith("-hits.csv"):
            ids.append(int(name[len("event"):-len("-hits.csv")]))
    return sorted(ids)


def write_trackml_event(event: EventRecord, directory) -> tuple:
    """Write the three TrackML CSV files; returns their paths."""
    os.makedirs(directory, exist_ok=True)
    hits_path, truth_path, particles_path = event_paths(directory, event.event_id)
    h = event.hits
    h[HITS_COLUMNS].to_csv(hits_path, index=False, float_format="%.17g")

    truth = pd.DataFrame({
        "hit_id": h["hit_id"],
        "particle_id": h["particle_id"],
        "tx": h["x"], "ty": h["y"], "tz": h["z"],
        "tpx": h["tpx"], "tpy": h["tpy"], "tpz": h["tpz"],
    })
    counts = h.loc[h["particle_id"] != 0, "particle_id"].value_counts()
    weight = h["particle_id"].map(lambda p: 0.0 if p == 0 else 1.0 / counts.get(p, 1) / max(1, len(counts)))
    truth["weight"] = weight.astype(float)
    truth[TRUTH_COLUMNS].to_csv(truth_path, index=False, float_format="%.17g")

    particles = event.particles
    if particles is None:
        particles = pd.DataFrame(columns=PARTICLES_COLUMNS)
    particles[PARTICLES_COLUMNS].to_csv(particles_path, index=False, float_format="%.17g")
    return hits_path, truth_path, particles_path


# ---------------------------------------------------------------------------
# Toy generator
# ---------------------------------------------------------------------------

@dataclass
class ToyConfig:
    n_particles: int = 50
    pt_range: tuple = (1.0, 10.0)  # GeV
    layer_radii: Sequence[float] = DEFAULT_LAYER_RADII  # mm
    layer_labels: Sequence[tuple] = DEFAULT_LAYER_LABELS
    field_strength: float = 2.0  # tesla
    z0_spread: float = 50.0  # mm, vertex z uniform in [-spread, spread]
    eta_range: tuple = (-1.2, 1.2)
    barrel_half_length: float = 1100.0  # mm; crossings beyond |z| are not recorded
    noise_hits_per_layer: int = 0
    seed: int = 0

    def __post_init__(self):
        radii = np.asarray(self.layer_radii, dtype=float)
        if radii.ndim != 1 or np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
            raise ValueError("layer_radii must be positive and strictly increasing")
        if len(self.layer_labels) != len(radii):
            raise ValueError("layer_labels must match layer_radii in length")
        lo, hi = self.pt_range
        if not 0 < lo <= hi:
            raise ValueError("pt_range must be positive with lo <= hi")
        if self.field_strength <= 0:
            raise ValueError("field_strength must be positive")


def helix_radius_mm(pt: float, field_strength: float) -> float:
    """Transverse radius of curvature in mm: pt [GeV] / (0.3 B [T]) metres."""
    return 1000.0 * pt / (0.3 * field_strength)


def helix_hits(pt, phi0, eta, z0, charge, radii, field_strength, half_length=np.inf):
    """Intersections of one helix from (0, 0, z0) with cylinders of radius ``radii``.

    Returns (layer_index, x, y, z, px, py, pz) arrays for the layers the helix
    reaches within ``|z| <= half_length``.
    """
    radii = np.asarray(radii, dtype=float)
    big_r = helix_radius_mm(pt, field_strength)
    reach = radii <= 2.0 * big_r
    r = radii[reach]
    turn = 2.0 * np.arcsin(r / (2.0 * big_r))  # bending angle at each crossing
    phi = phi0 - charge * turn / 2.0
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = z0 + big_r * turn * math.sinh(eta)
    direction = phi0 - charge * turn
    px = pt * np.cos(direction)
    py = pt * np.sin(direction)
    pz = np.full_like(r, pt * math.sinh(eta))
    inside = np.abs(z) <= half_length
    return np.flatnonzero(reach)[inside], x[inside], y[inside], z[inside], px[inside], py[inside], pz[inside]


def _module_id(phi: np.ndarray) -> np.ndarray:
    idx = np.floor((phi + np.pi) / (2 * np.pi) * TOY_MODULES_PER_LAYER).astype(np.int64)
    return np.clip(idx, 0, TOY_MODULES_PER_LAYER - 1) + 1


def generate_toy_event(config: ToyConfig, event_id: int = 0) -> EventRecord:
    """Helical tracks from a line of vertices along the beam, one hit per crossed layer.

    The random stream is derived from (config.seed, event_id), so events of
    one config differ from each other and each one is reproducible alone.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, event_id])))
    radii = np.asarray(config.layer_radii, dtype=float)
    labels = list(config.layer_labels)
    rows = []
    particles = []
    for k in range(config.n_particles):
        pid = k + 1
        pt = rng.uniform(*config.pt_range)
        phi0 = np.pi - rng.uniform(0.0, 2 * np.pi)  # (-pi, pi]
        eta = rng.uniform(*config.eta_range)
        z0 = rng.uniform(-config.z0_spread, config.z0_spread)
        charge = 1 if rng.random() < 0.5 else -1
        layers, x, y, z, px, py, pz = helix_hits(pt, phi0, eta, z0, charge, radii, config.field_strength,
                                                     config.barrel_half_length)
        for j, li in enumerate(layers):
            rows.append((li, x[j], y[j], z[j], pid, pt, px[j], py[j], pz[j]))
        particles.append((pid, 0.0, 0.0, z0, pt * math.cos(phi0), pt * math.sin(phi0),
                          pt * math.sinh(eta), charge, len(layers)))
    max_eta = max(abs(e) for e in config.eta_range)
    for li, r in enumerate(radii):
        zmax = min(r * math.sinh(max_eta), config.barrel_half_length)
        for _ in range(config.noise_hits_per_layer):
            phi = np.pi - rng.uniform(0.0, 2 * np.pi)
            z = rng.uniform(-zmax, zmax)
            rows.append((li, r * math.cos(phi), r * math.sin(phi), z, 0, 0.0, 0.0, 0.0, 0.0))

    if not rows:
        return EventRecord(event_id, empty_hits(), pd.DataFrame(particles, columns=PARTICLES_COLUMNS))

    arr = pd.DataFrame(rows, columns=["layer", "x", "y", "z", "particle_id", "pt", "tpx", "tpy", "tpz"])
    arr["volume_id"] = [labels[i][0] for i in arr["layer"]]
    arr["layer_id"] = [labels[i][1] for i in arr["layer"]]
    arr["module_id"] = _module_id(np.arctan2(arr["y"].to_numpy(), arr["x"].to_numpy()))
    arr["hit_id"] = np.arange(1, len(arr) + 1, dtype=np.int64)
    hits = arr[EVENT_COLUMNS].astype({"particle_id": "int64", "volume_id": "int64",
                                      "layer_id": "int64", "module_id": "int64"})
    parts = pd.DataFrame(particles, columns=PARTICLES_COLUMNS)
    parts = parts.astype({"particle_id": "int64", "q": "int64", "nhits": "int64"})
    return EventRecord(event_id, hits.reset_index(drop=True), parts)


def fit_circle_through_origin(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares radius of a circle x^2 + y^2 = 2 a x + 2 b y through (0, 0)."""
    A = np.column_stack([2 * x, 2 * y])
    rhs = x**2 + y**2
    (a, b), *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return float(math.hypot(a, b))
