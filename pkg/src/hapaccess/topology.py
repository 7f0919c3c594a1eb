"""HAP constellation geometry, device placement and cooperation sets.

Coordinates are in meters: ``x, y`` on the ground plane and ``z`` for
altitude. HAP ``i`` has its nadir at ``(x_i, y_i, 0)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_ALTITUDE_M = 20_000.0
DEFAULT_FOOTPRINT_M = 50_000.0

# Distances are rounded to this many decimals (meters) before tie-breaking,
# so that lattice points that are equidistant up to float noise tie exactly.
_TIE_DECIMALS = 6

# axial hex directions, counter-clockwise starting at azimuth 0
_HEX_DIRS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))


@dataclass(frozen=True)
class HapNode:
    id: int
    position: tuple[float, float, float]
    n_antennas: int
    is_edge_anchor: bool = True

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ConfigError(f"HAP {self.id}: altitude must be > 0, got {self.position[2]}")
        if self.n_antennas < 1:
            raise ConfigError(f"HAP {self.id}: n_antennas must be >= 1, got {self.n_antennas}")

    @property
    def nadir(self) -> np.ndarray:
        return np.array(self.position[:2])


@dataclass(frozen=True)
class CooperationSet:
    anchor: int
    members: tuple[int, ...]

    @property
    def n_co(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class NetworkTopology:
    """Immutable snapshot of one network realization.

    ``device_positions`` is ``(K, 2)``; ``cell_assignment[k]`` is the id of
    the HAP whose nadir is horizontally nearest to device ``k``.
    """

    haps: tuple[HapNode, ...]
    footprint_radius: float
    device_positions: np.ndarray = field(repr=False)
    cell_assignment: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_ant = {h.n_antennas for h in self.haps}
        if len(n_ant) != 1:
            raise ConfigError(f"all HAPs must carry the same antenna count, got {sorted(n_ant)}")
        for arr in (self.device_positions, self.cell_assignment):
            arr.setflags(write=False)

    @property
    def n_haps(self) -> int:
        return len(self.haps)

    @property
    def n_devices(self) -> int:
        return self.device_positions.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.haps[0].n_antennas

    @property
    def hap_positions(self) -> np.ndarray:
        return np.array([h.position for h in self.haps], dtype=float)

    @property
    def nadirs(self) -> np.ndarray:
        return self.hap_positions[:, :2]

    @property
    def anchor_ids(self) -> list[int]:
        return [h.id for h in self.haps if h.is_edge_anchor]

    def device_positions_3d(self) -> np.ndarray:
        return np.column_stack([self.device_positions, np.zeros(self.n_devices)])

    def distances(self) -> np.ndarray:
        """3-D device-to-HAP distances, shape ``(K, B)``."""
        diff = self.device_positions_3d()[:, None, :] - self.hap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


def hex_ring_counts(max_rings: int = 10) -> list[int]:
    return [3 * n * (n + 1) + 1 for n in range(max_rings + 1)]


def build_hex_deployment(b: int, spacing: float, altitude: float = DEFAULT_ALTITUDE_M,
                         n_antennas: int = 16,
                         edge_anchors: Sequence[int] | None = None) -> list[HapNode]:
    """Place ``b`` HAPs on a hexagonal lattice centred at the origin.

    HAP 0 sits at the origin; the others fill concentric rings, each ring
    starting at azimuth 0 and proceeding counter-clockwise. ``edge_anchors``
    lists the HAPs carrying an edge server (default: all of them).
    """
    if spacing <= 0:
        raise ConfigError(f"HAP spacing must be > 0, got {spacing}")
    valid = hex_ring_counts(max(3, int(math.sqrt(max(b, 1) / 3)) + 2))
    if b not in valid:
        nearest = min(valid, key=lambda v: (abs(v - b), v))
        raise ConfigError(f"unsupported HAP count {b}: hexagonal layouts need one of "
                          f"1, 7, 19, ...; nearest valid count is {nearest}")

    axial = [(0, 0)]
    ring = 1
    while len(axial) < b:
        for i in range(6):
            cq, cr = _HEX_DIRS[i]
            sq, sr = _HEX_DIRS[(i + 2) % 6]
            for j in range(ring):
                axial.append((ring * cq + j * sq, ring * cr + j * sr))
        ring += 1

    anchors = set(range(b)) if edge_anchors is None else set(edge_anchors)
    bad = anchors - set(range(b))
    if bad:
        raise ConfigError(f"edge anchor ids {sorted(bad)} out of range for {b} HAPs")
    if not anchors:
        raise ConfigError("at least one HAP must carry an edge server")

    haps = []
    for i, (q, r) in enumerate(axial):
        x = spacing * (q + 0.5 * r)
        y = spacing * (math.sqrt(3) / 2 * r)
        haps.append(HapNode(i, (x, y, float(altitude)), n_antennas, i in anchors))
    return haps


def assign_cells(device_positions: np.ndarray, haps: Sequence[HapNode]) -> np.ndarray:
    """Nearest-nadir cell of every device (ties go to the lowest HAP id)."""
    if len(device_positions) == 0:
        return np.zeros(0, dtype=int)
    nadirs = np.array([h.position[:2] for h in haps])
    d = np.linalg.norm(device_positions[:, None, :] - nadirs[None, :, :], axis=-1)
    # argmin returns the first index among exact ties
    return np.argmin(np.round(d, _TIE_DECIMALS), axis=1)


def place_devices(haps: Sequence[HapNode], footprint_radius: float, k: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` device positions uniformly over the union of HAP footprints.

    Uniform points in a bounding disc are drawn in batches and rejected if
    they fall outside every footprint.
    """
    if footprint_radius <= 0:
        raise ConfigError(f"footprint_radius must be > 0, got {footprint_radius}")
    if k < 0:
        raise ConfigError(f"device count must be >= 0, got {k}")
    nadirs = np.array([h.position[:2] for h in haps])
    bound = np.max(np.linalg.norm(nadirs, axis=1)) + footprint_radius
    accepted = []
    n_have = 0
    while n_have < k:
        n_draw = max(64, 2 * (k - n_have))
        rad = bound * np.sqrt(rng.random(n_draw))
        ang = 2 * np.pi * rng.random(n_draw)
        pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        d = np.linalg.norm(pts[:, None, :] - nadirs[None, :, :], axis=-1)
        pts = pts[np.any(d <= footprint_radius, axis=1)]
        accepted.append(pts)
        n_have += len(pts)
    if k == 0:
        return np.zeros((0, 2))
    return np.concatenate(accepted)[:k]


def build_topology(haps: Sequence[HapNode], footprint_radius: float, k: int,
                   rng: np.random.Generator) -> NetworkTopology:
    positions = place_devices(haps, footprint_radius, k, rng)
    return NetworkTopology(tuple(haps), float(footprint_radius), positions,
                           assign_cells(positions, haps))


def with_devices(topology: NetworkTopology, positions: np.ndarray) -> NetworkTopology:
    """Same HAPs and footprint, explicit device positions."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    return NetworkTopology(topology.haps, topology.footprint_radius, positions.copy(),
                           assign_cells(positions, topology.haps))


def build_cooperation_sets(haps: Sequence[HapNode], n_co: int,
                           anchors: Sequence[int] | None = None) -> list[CooperationSet]:
    """For each anchor, the ``n_co`` HAPs nearest to it (itself first)."""
    b = len(haps)
    if not 1 <= n_co <= b:
        raise ConfigError(f"n_co must lie in [1, {b}], got {n_co}")
    pos = np.array([h.position for h in haps], dtype=float)
    if anchors is None:
        anchors = [h.id for h in haps if h.is_edge_anchor]
    sets = []
    for a in anchors:
        d = np.round(np.linalg.norm(pos - pos[a], axis=1), _TIE_DECIMALS)
        order = sorted(range(b), key=lambda j: (d[j], j))
        sets.append(CooperationSet(a, tuple(order[:n_co])))
    return sets


def classify_region(position, topology: NetworkTopology, center_fraction: float = 0.5,
                    cell: int | None = None) -> str:
    """'center' if within ``center_fraction * footprint_radius`` of the cell nadir."""
    if not 0 < center_fraction < 1:
        raise ConfigError(f"center_fraction must lie in (0, 1), got {center_fraction}")
    position = np.asarray(position, dtype=float)
    if cell is None:
        cell = int(assign_cells(position[None, :], topology.haps)[0])
    d = math.hypot(*(position - topology.haps[cell].nadir))
    return "center" if d <= center_fraction * topology.footprint_radius else "edge"


def center_mask(topology: NetworkTopology, center_fraction: float = 0.5) -> np.ndarray:
    """Vectorized :func:`classify_region`: True for cell-center devices."""
    if not 0 < center_fraction < 1:
        raise ConfigError(f"center_fraction must lie in (0, 1), got {center_fraction}")
    own = topology.nadirs[topology.cell_assignment]
    d = np.hypot(*(topology.device_positions - own).T)
    return d <= center_fraction * topology.footprint_radius


def write_topology_csv(topology: NetworkTopology, path: str | Path) -> None:
    """HAP rows then device rows: kind, id, x, y, z, cell, edge_anchor."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "x_m", "y_m", "z_m", "cell", "edge_anchor"])
        for h in topology.haps:
            w.writerow(["hap", h.id, *(repr(float(c)) for c in h.position), h.id,
                        int(h.is_edge_anchor)])
        for k, (x, y) in enumerate(topology.device_positions):
            w.writerow(["device", k, repr(float(x)), repr(float(y)), "0.0",
                        int(topology.cell_assignment[k]), ""])
