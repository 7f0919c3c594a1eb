"""SIC-based joint activity detection and channel estimation.

Every anchor observes ``Y_p = S_p X_p + N_p`` for ``p = 1..P`` pilot
subcarriers, where ``X_p`` is ``K x M`` (``M = n_co * N_r``) and row ``k`` of
every ``X_p`` is zero unless device ``k`` is active. One detection round is

1. spatial-domain joint estimation of ``X`` and per-device activity
   (:func:`module_a_spatial`),
2. angular-domain thresholding of the reliably detected rows
   (:func:`module_b_angular_refine`),
3. cancellation of those rows from the residual (:func:`module_c_sic`),

and rounds repeat on the residual until nothing new is reliable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .airframe import PilotBook, ReceivedFrame
from .channel import from_angular, to_angular
from .errors import ConfigError, DimensionError
from .topology import NetworkTopology

ALGORITHMS = ("amp-em", "somp", "oracle-ls")

# bounds on the learned activity prior
_LAMBDA_MIN = 1e-5
_LAMBDA_MAX = 1 - 1e-5
# relative floors (w.r.t. mean received power) keeping EM variances positive
_NOISE_FLOOR = 1e-10
_SLAB_FLOOR = 1e-13
_INIT_SNR = 1.0
_MIN_DAMPING = 0.02
_ROUNDOFF = 1e-20          # residual/observation energy ratio treated as zero
# device-scale grid of the slab prior, relative to the learned block profile
_SCALE_GRID = np.logspace(-3, 3, 13)


@dataclass(frozen=True)
class DetectorConfig:
    algorithm: str = "amp-em"
    activity_threshold: float = 0.5
    reliability_threshold: float = 0.9
    max_sic_rounds: int = 4
    inner_iterations: int = 50
    damping: float = 0.7
    angular_keep_ratio: float = 0.15
    enable_angular_refine: bool = True
    enable_sic: bool = True
    tolerance: float = 1e-6
    somp_plateau: float = 2.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown detector algorithm {self.algorithm!r}; "
                              f"expected one of {', '.join(ALGORITHMS)}")
        if not 0 <= self.activity_threshold <= 1 or not 0 <= self.reliability_threshold <= 1:
            raise ConfigError("activity and reliability thresholds must lie in [0, 1]")
        if self.reliability_threshold < self.activity_threshold:
            raise ConfigError(f"reliability_threshold={self.reliability_threshold} must be >= "
                              f"activity_threshold={self.activity_threshold}")
        if self.max_sic_rounds < 1:
            raise ConfigError(f"max_sic_rounds must be >= 1, got {self.max_sic_rounds}")
        if self.inner_iterations < 1:
            raise ConfigError(f"inner_iterations must be >= 1, got {self.inner_iterations}")
        if not 0 < self.damping <= 1:
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 <= self.angular_keep_ratio <= 1:
            raise ConfigError(f"angular_keep_ratio must lie in [0, 1], got {self.angular_keep_ratio}")

    def spatial_only(self) -> "DetectorConfig":
        """The single-pass spatial-domain baseline with the same Module A settings."""
        return replace(self, enable_sic=False, enable_angular_refine=False)


@dataclass
class ModuleAOutput:
    """Activity metrics ``lam`` (K,) and posterior-mean estimates ``x`` (P, K, M)."""

    lam: np.ndarray
    x: np.ndarray
    noise_var: float = 0.0
    iterations: int = 0
    converged: bool = True


# --------------------------------------------------------------------------
# Module A
# --------------------------------------------------------------------------

def _column_blocks(m: int, n_antennas: int | None) -> np.ndarray:
    if n_antennas is None:
        return np.zeros(m, dtype=int)
    if m % n_antennas:
        raise DimensionError(f"{m} observation columns is not a multiple of N_r={n_antennas}")
    return np.repeat(np.arange(m // n_antennas), n_antennas)


def _check_dims(y, s):
    if y.ndim != 3 or s.ndim != 3 or y.shape[:2] != s.shape[:2]:
        raise DimensionError(f"observations {y.shape} and pilots {s.shape} are inconsistent")


def amp_em(y: np.ndarray, s: np.ndarray, config: DetectorConfig,
           n_antennas: int | None = None, noise_floor: float = 0.0) -> ModuleAOutput:
    """Damped GAMP with a row-sparse Bernoulli-Gaussian prior and EM learning.

    Row ``k`` of every ``X_p`` is either all zero or drawn from a Gaussian
    slab whose variance on HAP block ``b`` is ``alpha[k, b] * base[b]``.
    Blocks are consecutive runs of ``n_antennas`` columns. Each scale
    ``alpha[k, b]`` carries a log-uniform prior on a fixed grid, so the
    per-(device, block) slab variance is learned as a posterior rather than
    a point estimate and a silent row cannot fit its own noise. EM updates
    the activity prior, the block profile ``base`` and the noise variance.

    ``lam`` holds the posterior activity probability of each device. The
    learned noise variance never drops below ``noise_floor``.
    """
    _check_dims(y, s)
    n_p, t, k = s.shape
    m = y.shape[2]
    blocks = _column_blocks(m, n_antennas)
    n_blk = blocks.max() + 1 if m else 1
    onehot = (blocks[:, None] == np.arange(n_blk)[None]).astype(float)   # (M, n_blk)

    e_y = float(np.mean(np.abs(y) ** 2)) if y.size else 0.0
    if k == 0 or e_y == 0.0:
        return ModuleAOutput(np.zeros(k), np.zeros((n_p, k, m), complex), 0.0, 0, True)

    cn = np.sum(np.abs(s) ** 2, axis=1)                          # (P, K)
    sh = np.conj(np.swapaxes(s, 1, 2))                           # (P, K, T)
    beta = config.damping
    n_g = _SCALE_GRID.size

    noise_floor = max(float(noise_floor), _NOISE_FLOOR * e_y)
    noise = max(e_y / (1 + _INIT_SNR), noise_floor)
    prior_cap = min(0.5, 0.5 * t / k)
    prior = prior_cap
    e_blk = (np.abs(y) ** 2).mean(axis=(0, 1)) @ onehot / onehot.sum(axis=0)
    base = np.maximum(e_blk * _INIT_SNR / (1 + _INIT_SNR), _SLAB_FLOOR * e_y) * t / (
        prior * k * np.mean(cn))

    n_col = onehot.sum(axis=0)                                   # columns per block
    x = np.zeros((n_p, k, m), dtype=complex)
    vx = np.full((n_p, k, n_blk), prior * base.mean())          # block-averaged variances
    s_hat = np.zeros((n_p, t, m), dtype=complex)
    inv = None
    lam = np.full(k, prior)
    converged = False
    it = 0
    good = None
    for it in range(1, config.inner_iterations + 1):
        sx = s @ x
        # an estimate that fits worse than zero means the iteration is
        # diverging: step back to the last sane state with heavier damping
        if np.mean(np.abs(y - sx) ** 2) > e_y:
            if good is None or beta < _MIN_DAMPING:
                break
            x, vx, s_hat, inv, noise, prior, base, lam = good
            beta *= 0.5
            continue
        good = (x, vx, s_hat, inv, noise, prior, base, lam)

        # output (measurement) side
        vp = np.einsum("pk,pkb->pb", cn, vx) / t                 # (P, n_blk)
        p_hat = sx - vp[:, None, blocks] * s_hat
        inv_new = 1.0 / (vp + noise)
        s_new = (y - p_hat) * inv_new[:, None, blocks]

        # EM noise update from the posterior of z = S x
        resid = (noise * inv_new)[:, None, blocks] * (y - p_hat)
        noise = max(float(np.mean(np.abs(resid) ** 2)
                          + np.sum(vp * noise * inv_new * n_col) / (n_p * m)), noise_floor)

        s_hat = beta * s_new + (1 - beta) * s_hat
        inv = inv_new if inv is None else beta * inv_new + (1 - beta) * inv
        # input side: r = x + CN(0, vr)
        vr = 1.0 / (cn[:, :, None] * inv[:, None, :])             # (P, K, n_blk)
        r = x + vr[:, :, blocks] * (sh @ s_hat)
        r2 = (np.abs(r) ** 2) @ onehot                           # (P, K, n_blk)

        # per-(device, block) log-likelihood ratio for every scale on the grid
        sv = _SCALE_GRID[:, None, None, None] * base             # (G, 1, 1, n_blk)
        gain = sv / (sv + vr)                                    # (G, P, K, n_blk)
        ll = (r2 * gain / vr + n_col * np.log1p(-gain)).sum(axis=1)
        top = ll.max(axis=0)
        ew = np.exp(ll - top)
        tot = ew.sum(axis=0)
        llr = (top + np.log(tot / n_g)).sum(axis=1)              # (K,)
        lam = 0.5 * (1 + np.tanh(0.5 * np.clip(np.log(prior / (1 - prior)) + llr, -700, 700)))
        w = (ew / tot)[:, None]                                  # (G, 1, K, n_blk) scale posterior

        wg = w * gain
        g_mean = wg.sum(axis=0)                                  # (P, K, n_blk)
        g_sq = (wg * gain).sum(axis=0)
        li = lam[None, :, None]
        x_new = li * g_mean[:, :, blocks] * r
        second = li * (g_sq * r2 + n_col * g_mean * vr)          # per-block sums of E|x|^2
        vx_new = np.maximum(second - (li * g_mean) ** 2 * r2, 0.0) / n_col

        # EM hyperparameters
        prior = float(np.clip(lam.mean(), _LAMBDA_MIN, prior_cap))
        scaled = (wg / _SCALE_GRID[:, None, None, None] * (gain * r2 + n_col * vr)).sum(axis=0)
        num = (li * scaled).sum(axis=(0, 1))
        den = lam.sum() * n_p * n_col
        base = np.maximum(num / np.maximum(den, 1e-300), _SLAB_FLOOR * e_y)

        x_prev = x
        x = beta * x_new + (1 - beta) * x
        vx = beta * vx_new + (1 - beta) * vx
        dx = np.linalg.norm(x - x_prev)
        if it > 1 and dx <= config.tolerance * max(np.linalg.norm(x_prev), 1e-300):
            converged = True
            break
    return ModuleAOutput(lam, x, noise, it, converged)


def somp(y: np.ndarray, s: np.ndarray, config: DetectorConfig) -> ModuleAOutput:
    """Simultaneous OMP over all subcarriers and columns.

    Atoms are chosen by aggregate normalized correlation with the residual;
    after each pick the support is refit by least squares per subcarrier.
    The last pick is rejected, and the search stops, once the fractional
    drop in residual energy falls below ``somp_plateau / (T - |support|)``.
    """
    _check_dims(y, s)
    n_p, t, k = s.shape
    m = y.shape[2]
    x = np.zeros((n_p, k, m), dtype=complex)
    e0 = float(np.sum(np.abs(y) ** 2))
    if k == 0 or e0 == 0.0:
        return ModuleAOutput(np.zeros(k), x, 0.0, 0, True)
    cn = np.sum(np.abs(s) ** 2, axis=1)
    sh = np.conj(np.swapaxes(s, 1, 2))
    support: list[int] = []
    resid = y
    energy = e0
    coef = None
    while len(support) < min(k, t - 1):
        score = (np.sum(np.abs(sh @ resid) ** 2, axis=2) / cn).sum(axis=0)
        score[support] = -np.inf
        cand = support + [int(np.argmax(score))]
        sub = s[:, :, cand]
        new_coef = np.stack([np.linalg.lstsq(sub[p], y[p], rcond=None)[0] for p in range(n_p)])
        new_resid = y - sub @ new_coef
        new_energy = float(np.sum(np.abs(new_resid) ** 2))
        drop = (energy - new_energy) / energy
        if drop < config.somp_plateau / (t - len(support)):
            break
        support, coef, resid, energy = cand, new_coef, new_resid, new_energy
        if energy <= 1e-24 * e0:
            break
    lam = np.zeros(k)
    if support:
        lam[support] = 1.0
        x[:, support, :] = coef
    return ModuleAOutput(lam, x, energy / (n_p * t * m), len(support), True)


def oracle_ls(y: np.ndarray, s: np.ndarray, active) -> tuple[np.ndarray, bool]:
    """Per-subcarrier least squares on the true support.

    Returns the ``(P, K, M)`` estimate and a flag that is True when some
    pilot submatrix was rank deficient and a ridge-regularized solve was used.
    """
    _check_dims(y, s)
    n_p, t, k = s.shape
    active = np.asarray(active, dtype=int)
    x = np.zeros((n_p, k, y.shape[2]), dtype=complex)
    if active.size == 0:
        return x, False
    flagged = False
    for p in range(n_p):
        sa = s[p][:, active]
        if np.linalg.matrix_rank(sa) < active.size:
            flagged = True
            gram = sa.conj().T @ sa
            eps = 1e-8 * np.real(np.trace(gram)) / active.size
            x[p, active] = np.linalg.solve(gram + eps * np.eye(active.size), sa.conj().T @ y[p])
        else:
            x[p, active] = np.linalg.lstsq(sa, y[p], rcond=None)[0]
    return x, flagged


def oracle_ls_expected_nmse(s: np.ndarray, h_active: np.ndarray, noise_var: float) -> float:
    """Closed-form mean NMSE of :func:`oracle_ls` at full column rank.

    ``h_active`` is the true ``(P, K_a, M)`` channel restricted to the support
    and ``s`` the matching ``(P, T, K_a)`` pilot submatrices.
    """
    m = h_active.shape[2]
    err = sum(np.real(np.trace(np.linalg.inv(sp.conj().T @ sp))) for sp in s)
    return float(noise_var * m * err / np.sum(np.abs(h_active) ** 2))


def module_a_spatial(y: np.ndarray, s: np.ndarray, config: DetectorConfig,
                     n_antennas: int | None = None, active=None,
                     noise_floor: float = 0.0) -> ModuleAOutput:
    """Dispatch to the configured algorithm; ``noise_floor`` bounds amp-em's noise estimate."""
    if config.algorithm == "amp-em":
        return amp_em(y, s, config, n_antennas, noise_floor)
    if config.algorithm == "somp":
        return somp(y, s, config)
    if active is None:
        raise ConfigError("oracle-ls detection needs the true active set")
    x, _ = oracle_ls(y, s, active)
    lam = np.zeros(s.shape[2])
    lam[np.asarray(active, dtype=int)] = 1.0
    return ModuleAOutput(lam, x)


# --------------------------------------------------------------------------
# Module B
# --------------------------------------------------------------------------

def module_b_angular_refine(x: np.ndarray, keep_ratio: float, n_antennas: int) -> np.ndarray:
    """Threshold each N_r-long block in the angular domain.

    ``x`` has shape ``(..., M)`` with ``M`` a multiple of ``n_antennas``.
    Angular entries below ``keep_ratio`` times the block's largest magnitude
    are zeroed before transforming back.
    """
    if not 0 <= keep_ratio <= 1:
        raise ConfigError(f"keep_ratio must lie in [0, 1], got {keep_ratio}")
    if keep_ratio == 0 or x.size == 0:
        return x.copy()
    shape = x.shape
    if shape[-1] % n_antennas:
        raise DimensionError(f"{shape[-1]} columns is not a multiple of N_r={n_antennas}")
    blk = to_angular(x.reshape(shape[:-1] + (shape[-1] // n_antennas, n_antennas)))
    mag = np.abs(blk)
    blk[mag < keep_ratio * mag.max(axis=-1, keepdims=True)] = 0
    return from_angular(blk).reshape(shape)


# --------------------------------------------------------------------------
# Module C
# --------------------------------------------------------------------------

@dataclass
class DetectionState:
    residual: np.ndarray                      # (P, T, M)
    remaining: np.ndarray                     # (K,) bool, devices still in the dictionary
    detected: np.ndarray                      # (K,) bool
    estimates: np.ndarray                     # (P, K, M), rows of detected devices
    lam: np.ndarray                           # (K,) activity metric at detection time
    log: list[tuple[int, int, float]] = field(default_factory=list)

    @classmethod
    def initial(cls, y: np.ndarray, k: int, dictionary=None) -> "DetectionState":
        remaining = np.zeros(k, dtype=bool)
        remaining[np.arange(k) if dictionary is None else np.asarray(dictionary, int)] = True
        return cls(y.copy(), remaining, np.zeros(k, bool),
                   np.zeros((y.shape[0], k, y.shape[2]), complex), np.zeros(k))

    @property
    def residual_energy(self) -> float:
        return float(np.sum(np.abs(self.residual) ** 2))


def module_c_sic(state: DetectionState, s: np.ndarray, reliable, estimates: np.ndarray,
                 lam=None, recorded: np.ndarray | None = None) -> DetectionState:
    """Cancel the reliable devices' contributions and move them out of the dictionary.

    ``estimates`` holds the ``(P, len(reliable), M)`` channel rows used for
    cancellation; ``recorded`` (default: the same rows) is what the detected
    set keeps as the reported estimate.
    """
    reliable = np.asarray(reliable, dtype=int)
    if reliable.size == 0:
        return state
    if not np.all(state.remaining[reliable]):
        raise ValueError("reliable devices must be drawn from the remaining dictionary")
    residual = state.residual - s[:, :, reliable] @ estimates
    remaining = state.remaining.copy()
    remaining[reliable] = False
    detected = state.detected.copy()
    detected[reliable] = True
    est = state.estimates.copy()
    est[:, reliable] = estimates if recorded is None else recorded
    lam_all = state.lam.copy()
    lam_all[reliable] = 1.0 if lam is None else lam
    new = DetectionState(residual, remaining, detected, est, lam_all, list(state.log))
    new.log.append((len(state.log) + 1, int(reliable.size), new.residual_energy))
    return new


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------

@dataclass
class AnchorResult:
    """Detection outcome of one anchor over its cooperation set ``members``.

    ``estimates`` is ``(P, K, n_co * N_r)`` with column blocks in member order.
    """

    anchor: int
    members: tuple[int, ...]
    lam: np.ndarray
    verdict: np.ndarray
    estimates: np.ndarray
    rounds: int
    round_log: list[tuple[int, int, float]]
    residual_energy: list[float]
    converged: bool


def detect_anchor(y: np.ndarray, pilots: PilotBook | np.ndarray, config: DetectorConfig,
                  n_antennas: int, dictionary=None, active=None, anchor: int = 0,
                  members: Sequence[int] = (0,)) -> AnchorResult:
    """Run the SIC loop for one anchor observation ``y`` of shape ``(P, T, M)``.

    ``dictionary`` restricts the candidate devices (default: all). ``active``
    is only consulted by the ``oracle-ls`` algorithm.
    """
    s = pilots.s if isinstance(pilots, PilotBook) else np.asarray(pilots)
    _check_dims(y, s)
    k = s.shape[2]
    state = DetectionState.initial(y, k, dictionary)
    energies = [state.residual_energy]
    converged = True
    max_rounds = config.max_sic_rounds if config.enable_sic else 1
    rounds = 0
    idx = np.flatnonzero(state.remaining)
    out = ModuleAOutput(np.zeros(idx.size), np.zeros((y.shape[0], idx.size, y.shape[2]), complex))
    out_idx = idx
    # Cancelling c devices also removes the noise in their c pilot dimensions,
    # so later rounds would under-estimate it; round one's estimate is a floor.
    noise_floor = 0.0
    while rounds < max_rounds and idx.size:
        rounds += 1
        out_idx = idx
        act = None if active is None else np.searchsorted(idx, np.intersect1d(active, idx))
        out = module_a_spatial(state.residual, s[:, :, idx], config, n_antennas, act,
                               noise_floor)
        converged &= out.converged
        if rounds == 1:
            noise_floor = out.noise_var
        if not config.enable_sic:
            break
        rel = np.flatnonzero(out.lam >= config.reliability_threshold)
        if rel.size == 0:
            break
        # thresholding drops the weak angular leakage of strong links; cancelling
        # the refined rows would leave that leakage behind as structured residual
        # that later rounds fit with spurious devices, so cancel the raw rows
        raw = out.x[:, rel]
        refined = None
        if config.enable_angular_refine:
            refined = module_b_angular_refine(raw, config.angular_keep_ratio, n_antennas)
        state = module_c_sic(state, s, idx[rel], raw, out.lam[rel], refined)
        energies.append(state.residual_energy)
        idx = np.flatnonzero(state.remaining)
        if energies[-1] <= _ROUNDOFF * energies[0]:
            break                               # nothing but round-off is left

    # devices of the last Module A pass that are still uncancelled but above
    # the activity threshold join the detected set with that pass's estimates
    idx = out_idx
    last_lam = np.zeros(k)
    last_lam[idx] = out.lam
    extra = np.flatnonzero(state.remaining[idx] & (out.lam >= config.activity_threshold))
    verdict = state.detected.copy()
    verdict[idx[extra]] = True
    lam = state.lam.copy()
    lam[state.remaining] = last_lam[state.remaining]
    estimates = state.estimates.copy()
    if extra.size:
        est = out.x[:, extra]
        if config.enable_angular_refine:
            est = module_b_angular_refine(est, config.angular_keep_ratio, n_antennas)
        estimates[:, idx[extra]] = est
    return AnchorResult(anchor, tuple(members), lam, verdict, estimates, rounds,
                        state.log, energies, converged)


@dataclass
class DetectionResult:
    """Per-anchor outcomes plus the network-level verdict.

    ``estimates`` is the ``(P, B, K, N_r)`` estimate of the access channels;
    links to HAPs outside the deciding anchor's cooperation set are zero.
    """

    anchors: dict[int, AnchorResult]
    verdict: np.ndarray
    lam: np.ndarray
    estimates: np.ndarray

    @property
    def rounds(self) -> int:
        return max((r.rounds for r in self.anchors.values()), default=0)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.anchors.values())

    def diagnostics(self) -> list[tuple[int, int, int, float]]:
        """(anchor, round, cancelled, residual energy) rows; round 0 is the raw input."""
        rows = []
        for a, res in sorted(self.anchors.items()):
            rows.append((a, 0, 0, res.residual_energy[0]))
            rows.extend((a, rnd, n, e) for rnd, n, e in res.round_log)
        return rows


def run_sic_detector(frame: ReceivedFrame, pilots: PilotBook, config: DetectorConfig,
                     active=None) -> dict[int, AnchorResult]:
    """Detect at every anchor of ``frame`` over its full cooperation set.

    Anchors whose cooperation sets contain the same HAPs share one detection
    run, performed on the member ordering of the first such anchor.
    """
    n_r = frame.per_hap.shape[-1]
    cache: dict[frozenset, AnchorResult] = {}
    results = {}
    for cs in frame.coop_sets:
        key = frozenset(cs.members)
        if key not in cache:
            cache[key] = detect_anchor(frame.observation(cs.members), pilots, config, n_r,
                                       active=active, anchor=cs.anchor, members=cs.members)
        results[cs.anchor] = cache[key]
    return results


def run_cellular_baseline(frame: ReceivedFrame, pilots: PilotBook, config: DetectorConfig,
                          topology: NetworkTopology, active=None) -> dict[int, AnchorResult]:
    """Every HAP detects its own cell's devices from its own antennas only.

    Active devices of other cells stay in the observation as interference.
    """
    n_r = frame.per_hap.shape[-1]
    results = {}
    for b in range(topology.n_haps):
        cell = np.flatnonzero(topology.cell_assignment == b)
        results[b] = detect_anchor(frame.observation([b]), pilots, config, n_r,
                                   dictionary=cell, active=active, anchor=b, members=(b,))
    return results


def nearest_anchor(topology: NetworkTopology, anchors: Sequence[int]) -> np.ndarray:
    """For each device, the anchor whose nadir is nearest (ties: lowest id)."""
    anchors = np.sort(np.asarray(list(anchors), dtype=int))
    nadirs = topology.nadirs[anchors]
    d = np.linalg.norm(topology.device_positions[:, None, :] - nadirs[None], axis=-1)
    return anchors[np.argmin(np.round(d, 6), axis=1)] if len(d) else np.zeros(0, int)


def aggregate_network_verdict(results: dict[int, AnchorResult],
                              topology: NetworkTopology) -> DetectionResult:
    """Take each device's verdict and estimates from its nearest anchor."""
    if not results:
        raise ValueError("need at least one anchor result")
    any_res = next(iter(results.values()))
    n_p = any_res.estimates.shape[0]
    n_r = topology.n_antennas
    k = topology.n_devices
    owner = nearest_anchor(topology, results.keys())
    verdict = np.zeros(k, dtype=bool)
    lam = np.zeros(k)
    est = np.zeros((n_p, topology.n_haps, k, n_r), dtype=complex)
    for a, res in results.items():
        devs = np.flatnonzero(owner == a)
        if devs.size == 0:
            continue
        verdict[devs] = res.verdict[devs]
        lam[devs] = res.lam[devs]
        blocks = res.estimates[:, devs].reshape(n_p, devs.size, len(res.members), n_r)
        for j, b in enumerate(res.members):
            est[:, b, devs] = blocks[:, :, j]
    est[:, :, ~verdict] = 0
    return DetectionResult(dict(results), verdict, lam, est)
