"""Sporadic activity, large-scale gains and multipath access channels.

Each HAP carries a half-wavelength uniform linear array along the x axis.
The steering vector for an arrival at angle ``theta`` from broadside is
``a_n = exp(j*pi*n*sin(theta))``, ``n = 0..N_r-1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import speed_of_light

from .errors import ConfigError, DimensionError
from .topology import HapNode, NetworkTopology


@dataclass(frozen=True)
class ActivityPattern:
    active_set: np.ndarray
    k_total: int

    def __post_init__(self):
        self.active_set.setflags(write=False)

    @property
    def k_active(self) -> int:
        return len(self.active_set)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.k_total, dtype=bool)
        m[self.active_set] = True
        return m


@dataclass(frozen=True)
class MultipathSet:
    """Path parameters for every (device, HAP) pair, arrays of shape ``(K, B, L)``.

    Path 0 is the line-of-sight component.
    """

    gains: np.ndarray = field(repr=False)
    delays: np.ndarray = field(repr=False)
    angles: np.ndarray = field(repr=False)
    rician_kappa: float = 10.0

    @property
    def n_paths(self) -> int:
        return self.gains.shape[-1]


@dataclass(frozen=True)
class AccessChannelSet:
    """Activity-masked spatial channels ``H[p, b]`` of shape ``(P, B, K, N_r)``."""

    h: np.ndarray = field(repr=False)
    subcarrier_freqs: np.ndarray
    active_mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.h.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.h.shape

    def block(self, p: int, b: int) -> np.ndarray:
        return self.h[p, b]

    def stacked(self, members) -> np.ndarray:
        """``[H[p, m1] | H[p, m2] | ...]`` for all p, shape ``(P, K, n*N_r)``."""
        sub = self.h[:, list(members)]
        p, n, k, nr = sub.shape
        return sub.transpose(0, 2, 1, 3).reshape(p, k, n * nr)


def draw_activity(k: int, k_a: int, rng: np.random.Generator) -> ActivityPattern:
    if k_a < 0 or k_a > k:
        raise ConfigError(f"active count K_a={k_a} must lie in [0, K={k}]")
    active = np.sort(rng.choice(k, size=k_a, replace=False)) if k_a else np.zeros(0, int)
    return ActivityPattern(active.astype(int), k)


def free_space_gain(distance, carrier_freq):
    """Linear free-space power gain ``(c / (4 pi d f))**2``."""
    distance = np.asarray(distance, dtype=float)
    return (speed_of_light / (4 * np.pi * distance * carrier_freq)) ** 2


def large_scale_gains(topology: NetworkTopology, carrier_freq: float) -> np.ndarray:
    """Free-space gains ``g[k, b]`` from 3-D device-to-HAP distances."""
    return free_space_gain(topology.distances(), carrier_freq)


def steering_vector(theta, n_antennas: int) -> np.ndarray:
    """ULA response(s), trailing axis of length ``n_antennas``."""
    theta = np.asarray(theta, dtype=float)
    n = np.arange(n_antennas)
    return np.exp(1j * np.pi * np.sin(theta)[..., None] * n)


def los_angle(device_xy, hap_position) -> np.ndarray:
    """Arrival angle from broadside of an x-axis array (vectorized)."""
    device_xy = np.asarray(device_xy, dtype=float)
    hap_position = np.asarray(hap_position, dtype=float)
    rel = np.concatenate([device_xy, np.zeros(device_xy.shape[:-1] + (1,))], axis=-1) - hap_position
    ux = rel[..., 0] / np.linalg.norm(rel, axis=-1)
    return np.arcsin(np.clip(ux, -1.0, 1.0))


def _los_fraction(kappa: float, l_paths: int) -> float:
    if l_paths == 1 or np.isinf(kappa):
        return 1.0
    return kappa / (kappa + 1.0)


def _draw_paths(distance, los_theta, l_paths, kappa, max_delay, rng):
    shape = np.shape(distance)
    frac = _los_fraction(kappa, l_paths)
    gains = np.empty(shape + (l_paths,), dtype=complex)
    delays = np.empty(shape + (l_paths,))
    angles = np.empty(shape + (l_paths,))

    gains[..., 0] = np.sqrt(frac) * np.exp(2j * np.pi * rng.random(shape))
    delays[..., 0] = distance / speed_of_light
    angles[..., 0] = los_theta
    if l_paths > 1:
        nl = shape + (l_paths - 1,)
        var = (1.0 - frac) / (l_paths - 1)
        gains[..., 1:] = np.sqrt(var / 2) * (rng.standard_normal(nl) + 1j * rng.standard_normal(nl))
        # NLoS delays are excess delays on top of the LoS propagation delay
        delays[..., 1:] = delays[..., :1] + max_delay * rng.random(nl)
        angles[..., 1:] = rng.uniform(-np.pi / 2, np.pi / 2, nl)
    return gains, delays, angles


def draw_multipath(device_xy, hap: HapNode, l_paths: int, kappa: float, max_delay: float,
                   rng: np.random.Generator) -> MultipathSet:
    """Path set of one device-HAP link (arrays of shape ``(1, 1, L)``)."""
    if l_paths < 1:
        raise ConfigError(f"l_paths must be >= 1, got {l_paths}")
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    device_xy = np.asarray(device_xy, dtype=float)
    distance = np.linalg.norm(np.append(device_xy, 0.0) - np.asarray(hap.position))
    theta = los_angle(device_xy, hap.position)
    g, d, a = _draw_paths(np.array([[distance]]), np.array([[theta]]), l_paths, kappa,
                          max_delay, rng)
    return MultipathSet(g, d, a, kappa)


def draw_multipath_set(topology: NetworkTopology, l_paths: int, kappa: float, max_delay: float,
                       rng: np.random.Generator) -> MultipathSet:
    """Independent path sets for all ``K x B`` links."""
    if l_paths < 1:
        raise ConfigError(f"l_paths must be >= 1, got {l_paths}")
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    pos = topology.device_positions
    theta = np.stack([los_angle(pos, h.position) for h in topology.haps], axis=1) \
        if len(pos) else np.zeros((0, topology.n_haps))
    g, d, a = _draw_paths(topology.distances(), theta, l_paths, kappa, max_delay, rng)
    return MultipathSet(g, d, a, kappa)


def assemble_access_channels(activity: ActivityPattern, gains: np.ndarray,
                             multipath: MultipathSet, subcarrier_freqs,
                             n_antennas: int) -> AccessChannelSet:
    """Build ``H[p, b]`` rows ``sqrt(g) * sum_l gain_l exp(-j2pi f_p tau_l) a(theta_l)``.

    Rows of inactive devices are exactly zero.
    """
    freqs = np.atleast_1d(np.asarray(subcarrier_freqs, dtype=float))
    gains = np.asarray(gains, dtype=float)
    k, b = gains.shape
    if activity.k_total != k or multipath.gains.shape[:2] != (k, b):
        raise DimensionError(
            f"inconsistent dimensions: activity K={activity.k_total}, gains {gains.shape}, "
            f"multipath {multipath.gains.shape[:2]}")
    idx = activity.active_set
    h = np.zeros((len(freqs), b, k, n_antennas), dtype=complex)
    if len(idx):
        alpha = multipath.gains[idx]                                  # (Ka, B, L)
        tau = multipath.delays[idx]
        steer = steering_vector(multipath.angles[idx], n_antennas)    # (Ka, B, L, N)
        phase = np.exp(-2j * np.pi * freqs[:, None, None, None] * tau[None])  # (P, Ka, B, L)
        rows = np.einsum("pkbl,kbln->pbkn", alpha[None] * phase, steer)
        h[:, :, idx, :] = rows * np.sqrt(gains[idx].T)[None, :, :, None]
    return AccessChannelSet(h, freqs, activity.mask)


def to_angular(h: np.ndarray) -> np.ndarray:
    """Right-multiply the antenna axis by the unitary DFT matrix."""
    return np.fft.fft(h, axis=-1, norm="ortho")


def from_angular(h_ang: np.ndarray) -> np.ndarray:
    return np.fft.ifft(h_ang, axis=-1, norm="ortho")


def dump_channels_csv(channels: AccessChannelSet, path: str | Path, active_only: bool = True) -> None:
    """One row per (device, HAP, subcarrier, antenna) entry."""
    n_p, n_b, n_k, n_r = channels.shape
    devices = np.flatnonzero(channels.active_mask) if active_only else range(n_k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device", "hap", "subcarrier", "antenna", "real", "imag"])
        for k in devices:
            for b in range(n_b):
                for p in range(n_p):
                    for n in range(n_r):
                        v = channels.h[p, b, k, n]
                        w.writerow([k, b, p, n, repr(float(v.real)), repr(float(v.imag))])
