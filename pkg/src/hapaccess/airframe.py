"""Grant-free frame structure, pilot books and received-signal synthesis.

In the pilot phase each OFDM symbol uses a DFT length equal to the cyclic
prefix length, so one pilot symbol lasts ``(n_cp + p_dft) / B_s`` seconds.
A conventional frame reuses the data-phase DFT length ``n_dft`` for pilots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import AccessChannelSet
from .errors import ConfigError, DimensionError, SynthesisError
from .topology import CooperationSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameConfig:
    n_cp: int = 128
    p_dft: int = 128
    n_dft: int = 4096
    bandwidth_hz: float = 10e6
    t_p: int = 40
    p_pilot: int = 4
    carrier_freq_hz: float = 2e9

    def __post_init__(self):
        if self.n_cp < 1:
            raise ConfigError(f"n_cp must be >= 1, got {self.n_cp}")
        if self.p_dft != self.n_cp:
            raise ConfigError(f"pilot DFT length p_dft={self.p_dft} must equal n_cp={self.n_cp}")
        if self.n_dft < 4 * self.p_dft:
            raise ConfigError(f"n_dft={self.n_dft} must be at least 4 * p_dft = {4 * self.p_dft}")
        if self.n_dft < 8 * self.p_dft:
            log.warning("n_dft=%d is less than 8x p_dft=%d", self.n_dft, self.p_dft)
        if not 1 <= self.p_pilot <= self.p_dft:
            raise ConfigError(f"p_pilot={self.p_pilot} must lie in [1, p_dft={self.p_dft}]")
        if self.t_p < 0:
            raise ConfigError(f"t_p must be >= 0, got {self.t_p}")
        if self.bandwidth_hz <= 0 or self.carrier_freq_hz <= 0:
            raise ConfigError("bandwidth_hz and carrier_freq_hz must be > 0")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.p_dft

    def pilot_subcarrier_freqs(self) -> np.ndarray:
        """Baseband offsets of the ``p_pilot`` detector subcarriers, spread evenly."""
        idx = np.floor((np.arange(self.p_pilot) + 0.5) * self.p_dft / self.p_pilot) - self.p_dft // 2
        return idx * self.subcarrier_spacing_hz

    @property
    def max_excess_delay_s(self) -> float:
        return self.n_cp / self.bandwidth_hz


@dataclass(frozen=True)
class PilotBook:
    """Pilot matrices ``s[p]`` stacked as ``(P, T_p, K)``."""

    s: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.s.setflags(write=False)

    @property
    def t_p(self) -> int:
        return self.s.shape[1]

    @property
    def k(self) -> int:
        return self.s.shape[2]

    @property
    def p_pilot(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class ReceivedFrame:
    """Per-HAP pilot-phase observations plus the anchors' cooperation sets.

    ``per_hap`` is ``(P, B, T_p, N_r)``. The observation of an anchor is the
    column-wise concatenation over its cooperation set, in member order.
    """

    per_hap: np.ndarray = field(repr=False)
    coop_sets: tuple[CooperationSet, ...]
    noise_var: float

    def __post_init__(self):
        self.per_hap.setflags(write=False)

    def observation(self, members: Sequence[int]) -> np.ndarray:
        sub = self.per_hap[:, list(members)]
        p, n, t, nr = sub.shape
        return sub.transpose(0, 2, 1, 3).reshape(p, t, n * nr)

    def anchor_observation(self, anchor: int) -> np.ndarray:
        return self.observation(self.coop_set(anchor).members)

    def coop_set(self, anchor: int) -> CooperationSet:
        for cs in self.coop_sets:
            if cs.anchor == anchor:
                return cs
        raise KeyError(f"HAP {anchor} is not an anchor of this frame")

    @property
    def y(self) -> dict[int, np.ndarray]:
        return {cs.anchor: self.observation(cs.members) for cs in self.coop_sets}


def complex_normal(shape, var: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_pilots(k: int, t_p: int, p_pilot: int, rng: np.random.Generator,
                    shared: bool = False) -> PilotBook:
    """i.i.d. CN(0, 1/T_p) pilot matrices, independent per subcarrier unless ``shared``."""
    if t_p < 1:
        raise ConfigError(f"t_p must be >= 1, got {t_p}")
    if shared:
        s = np.broadcast_to(complex_normal((1, t_p, k), 1.0 / t_p, rng), (p_pilot, t_p, k)).copy()
    else:
        s = complex_normal((p_pilot, t_p, k), 1.0 / t_p, rng)
    return PilotBook(s)


def synthesize_received(pilots: PilotBook, channels: AccessChannelSet,
                        coop_sets: Sequence[CooperationSet], noise_var: float,
                        rng: np.random.Generator) -> ReceivedFrame:
    """Observations ``Y = S_p H[p, b] + N`` at every HAP.

    Noise is drawn per HAP antenna, so anchors sharing a member HAP see the
    same noise realization on its block.
    """
    n_p, n_b, n_k, n_r = channels.shape
    if pilots.s.shape[0] != n_p or pilots.k != n_k:
        raise DimensionError(f"pilot book {pilots.s.shape} does not match channels {channels.shape}")
    if noise_var < 0:
        raise ConfigError(f"noise_var must be >= 0, got {noise_var}")
    for cs in coop_sets:
        if cs.members[0] != cs.anchor or len(set(cs.members)) != len(cs.members):
            raise SynthesisError(f"malformed cooperation set {cs}")
        if any(not 0 <= m < n_b for m in cs.members):
            raise SynthesisError(f"cooperation set {cs} references HAPs outside 0..{n_b - 1}")
    y = np.einsum("ptk,pbkn->pbtn", pilots.s, channels.h)
    if noise_var > 0:
        y = y + complex_normal(y.shape, noise_var, rng)
    return ReceivedFrame(y, tuple(coop_sets), float(noise_var))


def pilot_phase_duration(frame: FrameConfig) -> float:
    return frame.t_p * (frame.n_cp + frame.p_dft) / frame.bandwidth_hz


def conventional_pilot_phase_duration(frame: FrameConfig) -> float:
    return frame.t_p * (frame.n_cp + frame.n_dft) / frame.bandwidth_hz


def calibrate_noise(target_snr_db: float, gains: np.ndarray, n_antennas: int = 1) -> float:
    """Noise variance putting the median of ``g * N_r / noise_var`` at the target SNR."""
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0:
        raise ConfigError("cannot calibrate noise on an empty gain set")
    return float(np.median(gains) * n_antennas / 10 ** (target_snr_db / 10))
