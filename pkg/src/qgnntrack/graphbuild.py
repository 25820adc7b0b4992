"""
Hit selection, doublet construction, slicing and graph files.

A slice is one (sector, z-bin) cell of an event. Doublets are formed only
between hits of the same slice on adjacent barrel layers, oriented from the
inner to the outer layer.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from .errors import GeometryError, ParseError, RangeError
from .trackdata import DEFAULT_LAYER_LABELS, EventRecord, cylindrical

# Fixed scaling bounds (mm).
R_BOUNDS = (0.0, 1100.0)
Z_BOUNDS = (-1100.0, 1100.0)

GRAPH_FORMAT = "qgnn-subgraph"
GRAPH_VERSION = 1


@dataclass(frozen=True)
class SelectionCuts:
    pt_min: float = 1.0  # GeV
    dphi_slope_max: float = 0.0006  # |dphi / dr| in 1/mm
    z0_max: float = 100.0  # mm
    eta_range: tuple = (-5.0, 5.0)
    barrel_volumes: frozenset = frozenset({8, 13, 17})
    # Radially ordered (volume_id, layer_id) pairs making up the barrel.
    barrel_layers: tuple = DEFAULT_LAYER_LABELS

    def __post_init__(self):
        if self.pt_min <= 0 or self.z0_max <= 0 or self.dphi_slope_max <= 0:
            raise ValueError("pt_min, z0_max and dphi_slope_max must be positive")
        if not self.eta_range[0] < self.eta_range[1]:
            raise ValueError("eta_range must be a nonempty interval")
        object.__setattr__(self, "barrel_volumes", frozenset(self.barrel_volumes))
        object.__setattr__(self, "barrel_layers", tuple(tuple(p) for p in self.barrel_layers))

    def layer_index(self, volume_id, layer_id) -> np.ndarray:
        """Radial layer index per hit, -1 when the pair is not a selected barrel layer."""
        lookup = {pair: i for i, pair in enumerate(self.barrel_layers) if pair[0] in self.barrel_volumes}
        vol = np.asarray(volume_id)
        lay = np.asarray(layer_id)
        return np.array([lookup.get((int(v), int(l)), -1) for v, l in zip(vol, lay)], dtype=np.int64)


@dataclass(frozen=True)
class SliceSpec:
    n_phi: int = 8
    n_z: int = 2
    # "phi" slices azimuthally (default); "eta" slices pseudorapidity.
    sector_axis: str = "phi"
    eta_bounds: tuple = (-5.0, 5.0)

    def __post_init__(self):
        if self.n_phi < 1 or self.n_z < 1:
            raise ValueError("n_phi and n_z must be >= 1")
        if self.sector_axis not in ("phi", "eta"):
            raise ValueError("sector_axis must be 'phi' or 'eta'")

    @property
    def n_slices(self) -> int:
        return self.n_phi * self.n_z

    def sector_bounds(self, index: int) -> tuple:
        lo, hi = (-math.pi, math.pi) if self.sector_axis == "phi" else self.eta_bounds
        width = (hi - lo) / self.n_phi
        return lo + index * width, lo + (index + 1) * width


@dataclass
class SubGraph:
    node_features: np.ndarray  # (N, 3): r, phi, z (raw or scaled)
    edges: np.ndarray  # (E, 2) node indices, inner -> outer
    labels: np.ndarray  # (E,) 0/1
    hit_ids: np.ndarray = None  # (N,)
    layers: np.ndarray = None  # (N,) radial layer index, -1 if unknown
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=float).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.hit_ids is None:
            self.hit_ids = np.arange(len(self.node_features), dtype=np.int64)
        self.hit_ids = np.asarray(self.hit_ids, dtype=np.int64).reshape(-1)
        if self.layers is None:
            self.layers = np.full(len(self.node_features), -1, dtype=np.int64)
        self.layers = np.asarray(self.layers, dtype=np.int64).reshape(-1)
        if len(self.layers) != len(self.node_features):
            raise ValueError("layers and node_features differ in length")
        if len(self.labels) != len(self.edges):
            raise ValueError("labels and edges differ in length")
        if len(self.hit_ids) != len(self.node_features):
            raise ValueError("hit_ids and node_features differ in length")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= len(self.node_features)):
            raise IndexError("edge references a missing node")

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, SubGraph):
            return NotImplemented
        return (
            np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.hit_ids, other.hit_ids)
            and np.array_equal(self.layers, other.layers)
            and self.meta == other.meta
        )


# ---------------------------------------------------------------------------
# Selection and doublets
# ---------------------------------------------------------------------------

def select_hits(event: EventRecord, cuts: SelectionCuts = SelectionCuts()) -> EventRecord:
    """Barrel hits of particles above pt_min inside the eta window, one per (particle, layer)."""
    h = event.hits
    if len(h) == 0:
        return EventRecord(event.event_id, h.copy(), event.particles)
    layer = cuts.layer_index(h["volume_id"], h["layer_id"])
    keep = (layer >= 0) & (h["particle_id"].to_numpy() != 0) & (h["pt"].to_numpy() > cuts.pt_min)
    r = np.hypot(h["x"].to_numpy(float), h["y"].to_numpy(float))
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.arcsinh(h["z"].to_numpy(float) / r)
    keep &= (r > 0) & (eta >= cuts.eta_range[0]) & (eta <= cuts.eta_range[1])

    sel = h.loc[keep].copy()
    sel["_layer"] = layer[keep]
    sel["_absz"] = sel["z"].abs()
    sel = sel.sort_values(["particle_id", "_layer", "_absz", "hit_id"], kind="mergesort")
    sel = sel.drop_duplicates(["particle_id", "_layer"], keep="first")
    sel = sel.sort_values("hit_id", kind="mergesort").drop(columns=["_layer", "_absz"])
    return EventRecord(event.event_id, sel.reset_index(drop=True), event.particles)


def wrap_angle(dphi):
    """Map angle differences to (-pi, pi]."""
    out = np.mod(np.asarray(dphi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def doublet_geometry(r1, phi1, z1, r2, phi2, z2):
    """(dphi, dr, z0) for inner hit 1 and outer hit 2."""
    dphi = wrap_angle(np.asarray(phi2) - np.asarray(phi1))
    dr = np.asarray(r2, dtype=float) - np.asarray(r1, dtype=float)
    if np.any(dr <= 0):
        raise GeometryError("outer-layer hit is not at larger radius than inner-layer hit")
    z0 = np.asarray(z1) - np.asarray(r1) * (np.asarray(z2) - np.asarray(z1)) / dr
    return dphi, dr, z0


def _doublets(r, phi, z, layer, cuts: SelectionCuts):
    """Edges (i, j) between layers k and k+1 passing the slope and z0 cuts."""
    if len(r) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3))
    pieces, feats = [], []
    for k in range(int(layer.max())):
        inner = np.flatnonzero(layer == k)
        outer = np.flatnonzero(layer == k + 1)
        if len(inner) == 0 or len(outer) == 0:
            continue
        ii, oo = np.meshgrid(inner, outer, indexing="ij")
        ii, oo = ii.ravel(), oo.ravel()
        dphi, dr, z0 = doublet_geometry(r[ii], phi[ii], z[ii], r[oo], phi[oo], z[oo])
        ok = (np.abs(dphi / dr) < cuts.dphi_slope_max) & (np.abs(z0) < cuts.z0_max)
        pieces.append(np.column_stack([ii[ok], oo[ok]]))
        feats.append(np.column_stack([dphi[ok], dr[ok], z0[ok]]))
    if not pieces:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3))
    return np.concatenate(pieces).astype(np.int64), np.concatenate(feats)


def build_doublets(event: EventRecord, cuts: SelectionCuts = SelectionCuts()):
    """Candidate edges over a selected event.

    Returns ``(edges, features)``: ``edges`` holds (inner, outer) row
    positions into ``event.hits`` and ``features`` the (dphi, dr, z0) of each.
    """
    h = event.hits
    if len(h) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3))
    r, phi, _ = cylindrical(h)
    layer = cuts.layer_index(h["volume_id"], h["layer_id"])
    if np.any(layer < 0):
        raise GeometryError("event contains hits outside the selected barrel layers")
    return _doublets(r, phi, h["z"].to_numpy(float), layer, cuts)


def label_edges(edges, event: EventRecord) -> np.ndarray:
    """1 where both ends share a nonzero particle_id."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    pid = event.hits["particle_id"].to_numpy()
    a, b = pid[edges[:, 0]], pid[edges[:, 1]]
    return ((a == b) & (a != 0)).astype(np.int64)


# ---------------------------------------------------------------------------
# Slicing and scaling
# ---------------------------------------------------------------------------

def slice_index(phi, eta, z, spec: SliceSpec):
    """(sector, z-bin) per hit; z bins are uniform over the fixed z bounds."""
    coord = np.asarray(phi if spec.sector_axis == "phi" else eta, dtype=float)
    lo, hi = (-math.pi, math.pi) if spec.sector_axis == "phi" else spec.eta_bounds
    sector = np.floor((coord - lo) / ((hi - lo) / spec.n_phi)).astype(np.int64)
    sector = np.clip(sector, 0, spec.n_phi - 1)
    zlo, zhi = Z_BOUNDS
    zbin = np.floor((np.asarray(z, dtype=float) - zlo) / ((zhi - zlo) / spec.n_z)).astype(np.int64)
    return sector, np.clip(zbin, 0, spec.n_z - 1)


def slice_event(event: EventRecord, spec: SliceSpec = SliceSpec(),
                cuts: SelectionCuts = SelectionCuts()) -> list:
    """One raw SubGraph per (sector, z-bin), ordered sector-major.

    Nodes within a slice are ordered by (layer, hit_id); node features are
    raw (r [mm], phi [rad], z [mm]).
    """
    h = event.hits
    if len(h):
        r, phi, eta = cylindrical(h)
        z = h["z"].to_numpy(float)
        layer = cuts.layer_index(h["volume_id"], h["layer_id"])
        if np.any(layer < 0):
            raise GeometryError("event contains hits outside the selected barrel layers")
        sector, zbin = slice_index(phi, eta, z, spec)
        hit_ids = h["hit_id"].to_numpy(np.int64)
        pid = h["particle_id"].to_numpy()
    out = []
    for s in range(spec.n_phi):
        for zb in range(spec.n_z):
            meta = {
                "event_id": int(event.event_id),
                "slice": (s, zb),
                "sector_axis": spec.sector_axis,
                "sector_bounds": spec.sector_bounds(s),
                "scaled": False,
            }
            if len(h) == 0:
                out.append(SubGraph(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0), meta=meta))
                continue
            idx = np.flatnonzero((sector == s) & (zbin == zb))
            idx = idx[np.lexsort((hit_ids[idx], layer[idx]))]
            edges, _ = _doublets(r[idx], phi[idx], z[idx], layer[idx], cuts)
            labels = ((pid[idx][edges[:, 0]] == pid[idx][edges[:, 1]]) & (pid[idx][edges[:, 0]] != 0))
            out.append(SubGraph(
                np.column_stack([r[idx], phi[idx], z[idx]]), edges, labels.astype(np.int64),
                hit_ids[idx], layer[idx], meta,
            ))
    return out


def scale_features(graph: SubGraph) -> SubGraph:
    """Min-max scale (r, phi, z) into [0, 1] using fixed bounds; no-op if already scaled."""
    if graph.meta.get("scaled"):
        return graph
    if graph.meta.get("sector_axis", "phi") == "phi":
        phi_lo, phi_hi = graph.meta.get("sector_bounds", (-math.pi, math.pi))
    else:
        phi_lo, phi_hi = -math.pi, math.pi
    bounds = np.array([R_BOUNDS, (phi_lo, phi_hi), Z_BOUNDS], dtype=float)
    x = graph.node_features
    # Sector edges are computed in floating point; allow a rounding-level overshoot.
    tol = 1e-12
    if np.any(x < bounds[:, 0] - tol) or np.any(x > bounds[:, 1] + tol):
        raise RangeError("node feature outside scaling bounds")
    scaled = np.clip((x - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0]), 0.0, 1.0)
    meta = dict(graph.meta)
    meta["scaled"] = True
    meta["bounds"] = [tuple(float(v) for v in b) for b in bounds]
    return SubGraph(scaled, graph.edges.copy(), graph.labels.copy(), graph.hit_ids.copy(),
                    graph.layers.copy(), meta)


def build_subgraphs(event: EventRecord, cuts: SelectionCuts = SelectionCuts(),
                    spec: SliceSpec = SliceSpec()) -> list:
    """select -> slice -> scale for one event."""
    selected = select_hits(event, cuts)
    return [scale_features(g) for g in slice_event(selected, spec, cuts)]


# ---------------------------------------------------------------------------
# Graph files
# ---------------------------------------------------------------------------
#
#   qgnn-subgraph 1
#   event_id <int>
#   slice <sector> <zbin>
#   sector_axis <phi|eta>
#   sector_bounds <lo> <hi>
#   scaled <0|1>
#   bounds <r_lo> <r_hi> <phi_lo> <phi_hi> <z_lo> <z_hi>     (scaled graphs only)
#   nodes <N>
#   <hit_id> <layer> <f0> <f1> <f2>                          (N lines)
#   edges <E>
#   <i> <j> <label>                                          (E lines)
#   end

def _fmt(v: float) -> str:
    return repr(float(v))


def format_graph(graph: SubGraph) -> str:
    m = graph.meta
    buf = io.StringIO()
    buf.write(f"{GRAPH_FORMAT} {GRAPH_VERSION}\n")
    buf.write(f"event_id {int(m.get('event_id', 0))}\n")
    s, zb = m.get("slice", (0, 0))
    buf.write(f"slice {int(s)} {int(zb)}\n")
    buf.write(f"sector_axis {m.get('sector_axis', 'phi')}\n")
    lo, hi = m.get("sector_bounds", (-math.pi, math.pi))
    buf.write(f"sector_bounds {_fmt(lo)} {_fmt(hi)}\n")
    buf.write(f"scaled {1 if m.get('scaled') else 0}\n")
    if m.get("scaled"):
        buf.write("bounds " + " ".join(_fmt(v) for b in m["bounds"] for v in b) + "\n")
    buf.write(f"nodes {graph.n_nodes}\n")
    for hid, lay, f in zip(graph.hit_ids, graph.layers, graph.node_features):
        buf.write(f"{int(hid)} {int(lay)} {_fmt(f[0])} {_fmt(f[1])} {_fmt(f[2])}\n")
    buf.write(f"edges {graph.n_edges}\n")
    for (i, j), y in zip(graph.edges, graph.labels):
        buf.write(f"{int(i)} {int(j)} {int(y)}\n")
    buf.write("end\n")
    return buf.getvalue()


def write_graph(graph: SubGraph, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_graph(graph))


class _Lines:
    def __init__(self, text: str, path):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0
        self.path = path

    def next(self, key: Optional[str] = None, n_fields: Optional[int] = None) -> list:
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file (expected {key or 'data'})", self.pos + 1, self.path)
        self.pos += 1
        parts = self.lines[self.pos - 1].split()
        if key is not None:
            if not parts or parts[0] != key:
                raise ParseError(f"expected {key!r}", self.pos, self.path)
            parts = parts[1:]
        if n_fields is not None and len(parts) != n_fields:
            raise ParseError(f"expected {n_fields} fields, got {len(parts)}", self.pos, self.path)
        return parts

    def peek_key(self) -> Optional[str]:
        if self.pos >= len(self.lines):
            return None
        parts = self.lines[self.pos].split()
        return parts[0] if parts else None

    def convert(self, fn, value):
        try:
            return fn(value)
        except ValueError:
            raise ParseError(f"bad value {value!r}", self.pos, self.path) from None


def parse_graph(text: str, path=None) -> SubGraph:
    ln = _Lines(text, path)
    header = ln.next(GRAPH_FORMAT, 1)
    if ln.convert(int, header[0]) != GRAPH_VERSION:
        raise ParseError(f"unsupported version {header[0]}", ln.pos, path)
    meta = {}
    meta["event_id"] = ln.convert(int, ln.next("event_id", 1)[0])
    s = ln.next("slice", 2)
    meta["slice"] = (ln.convert(int, s[0]), ln.convert(int, s[1]))
    meta["sector_axis"] = ln.next("sector_axis", 1)[0]
    b = ln.next("sector_bounds", 2)
    meta["sector_bounds"] = (ln.convert(float, b[0]), ln.convert(float, b[1]))
    meta["scaled"] = ln.convert(int, ln.next("scaled", 1)[0]) == 1
    if meta["scaled"]:
        v = [ln.convert(float, t) for t in ln.next("bounds", 6)]
        meta["bounds"] = [(v[0], v[1]), (v[2], v[3]), (v[4], v[5])]

    n = ln.convert(int, ln.next("nodes", 1)[0])
    hit_ids = np.zeros(n, dtype=np.int64)
    layers = np.zeros(n, dtype=np.int64)
    feats = np.zeros((n, 3))
    for i in range(n):
        parts = ln.next(None, 5)
        hit_ids[i] = ln.convert(int, parts[0])
        layers[i] = ln.convert(int, parts[1])
        feats[i] = [ln.convert(float, t) for t in parts[2:]]

    e = ln.convert(int, ln.next("edges", 1)[0])
    edges = np.zeros((e, 2), dtype=np.int64)
    labels = np.zeros(e, dtype=np.int64)
    for k in range(e):
        parts = ln.next(None, 3)
        edges[k] = [ln.convert(int, parts[0]), ln.convert(int, parts[1])]
        labels[k] = ln.convert(int, parts[2])
        if edges[k].min() < 0 or edges[k].max() >= n:
            raise ParseError("edge references a missing node", ln.pos, path)
    ln.next("end", 0)
    if ln.pos != len(ln.lines):
        raise ParseError("trailing content after 'end'", ln.pos + 1, path)
    return SubGraph(feats, edges, labels, hit_ids, layers, meta)


def read_graph(path) -> SubGraph:
    with open(path) as fh:
        return parse_graph(fh.read(), path)


def graph_filename(graph: SubGraph) -> str:
    s, zb = graph.meta["slice"]
    return f"event{graph.meta['event_id']:09d}_s{s:02d}_z{zb:02d}.graph"


def layer_pair_counts(graph: SubGraph) -> dict:
    """{inner_layer: (n_true, n_fake)} for the edges of one graph."""
    out = {}
    if graph.n_edges == 0:
        return out
    inner = graph.layers[graph.edges[:, 0]]
    for k in np.unique(inner):
        sel = inner == k
        n_true = int(graph.labels[sel].sum())
        out[int(k)] = (n_true, int(sel.sum()) - n_true)
    return out
