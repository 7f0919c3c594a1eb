import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import hapaccess.detector as det
from hapaccess.airframe import complex_normal, generate_pilots, synthesize_received
from hapaccess.channel import ActivityPattern, assemble_access_channels, draw_multipath_set, \
    large_scale_gains
from hapaccess.config import ScenarioConfig
from hapaccess.detector import (AnchorResult, DetectionState, DetectorConfig,
                                aggregate_network_verdict, detect_anchor, module_a_spatial,
                                module_b_angular_refine, module_c_sic, oracle_ls,
                                oracle_ls_expected_nmse, run_cellular_baseline,
                                run_sic_detector, somp)
from hapaccess.errors import ConfigError, DimensionError
from hapaccess.simulate import detect, synthesize_trial, trial_seed
from hapaccess.topology import (CooperationSet, build_cooperation_sets, build_hex_deployment,
                                build_topology, with_devices)

SMALL = ScenarioConfig(n_devices=50, n_active=5, t_p=30)


def trial(cfg=SMALL, index=0, noiseless=False, members=tuple(range(7))):
    d = synthesize_trial(cfg, trial_seed(cfg.master_seed, index))
    frame = d.frame
    if noiseless:
        frame = synthesize_received(d.pilots, d.channels, frame.coop_sets, 0.0, None)
    return d, frame.observation(members), d.channels.stacked(members)


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- config -----------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(algorithm="lasso"), dict(activity_threshold=0.95),
                                dict(max_sic_rounds=0), dict(damping=0.0),
                                dict(angular_keep_ratio=1.5), dict(inner_iterations=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        DetectorConfig(**kw)


# --- module A ---------------------------------------------------------------

def test_zero_observation_detects_nothing():
    s = generate_pilots(30, 10, 2, np.random.default_rng(0)).s
    out = module_a_spatial(np.zeros((2, 10, 16), complex), s, DetectorConfig(), 8)
    assert np.all(out.lam < 0.5) and not np.any(out.x)


def test_pure_noise_detects_nothing(rng):
    s = generate_pilots(200, 40, 4, rng).s
    for _ in range(5):
        y = complex_normal((4, 40, 24), 1.0, rng)
        assert np.all(module_a_spatial(y, s, DetectorConfig(), 8).lam < 0.5)


def test_dimension_check():
    with pytest.raises(DimensionError):
        module_a_spatial(np.zeros((2, 9, 8)), np.zeros((2, 10, 5)), DetectorConfig(), 8)
    with pytest.raises(DimensionError):
        module_a_spatial(np.ones((2, 10, 12)), np.ones((2, 10, 5)), DetectorConfig(), 8)


@pytest.mark.parametrize("index", range(5))
def test_noiseless_amp_em_matches_oracle(index):
    cfg = SMALL.with_(p_pilot=2)
    d, y, _ = trial(cfg, index, noiseless=True)
    out = module_a_spatial(y, d.pilots.s, DetectorConfig(), 8)
    assert np.array_equal(out.lam >= 0.5, d.activity.mask)
    ls, _ = oracle_ls(y, d.pilots.s, d.activity.active_set)
    assert rel_err(out.x, ls) < 1e-4


@pytest.mark.parametrize("index", range(5))
def test_noiseless_somp_matches_oracle(index):
    d, y, _ = trial(SMALL, index, noiseless=True)
    out = somp(y, d.pilots.s, DetectorConfig(algorithm="somp"))
    assert np.array_equal(out.lam == 1, d.activity.mask)
    ls, _ = oracle_ls(y, d.pilots.s, d.activity.active_set)
    assert rel_err(out.x, ls) < 1e-10


def test_single_device_argmax_at_20db():
    cfg = ScenarioConfig(n_active=1, snr_db=20.0)
    hits = 0
    for i in range(100):
        d, y, _ = trial(cfg, i)
        out = module_a_spatial(y, d.pilots.s, DetectorConfig(), cfg.n_antennas)
        hits += int(np.argmax(out.lam) == d.activity.active_set[0])
    assert hits >= 99


def test_somp_scale_invariant_support():
    d, y, _ = trial(SMALL.with_(snr_db=15.0), 3)
    base = somp(y, d.pilots.s, DetectorConfig(algorithm="somp")).lam
    for c in (1e-3, 3.7, 1e4):
        assert np.array_equal(somp(c * y, c * d.pilots.s, DetectorConfig(algorithm="somp")).lam,
                              base)


@pytest.mark.parametrize("index", range(3))
def test_amp_em_scale_equivariant_verdicts(index):
    cfg = ScenarioConfig(t_p=20)
    d = synthesize_trial(cfg, trial_seed(cfg.master_seed, index))
    ref = detect(d, cfg).verdict
    for c in (3.7, 1e-3):
        frame = replace(d.frame, per_hap=c * d.frame.per_hap)
        pilots = replace(d.pilots, s=c * d.pilots.s)
        scaled = replace(d, frame=frame, pilots=pilots)
        assert np.array_equal(detect(scaled, cfg).verdict, ref)


def test_non_convergence_flagged_not_raised():
    d, y, _ = trial(ScenarioConfig(t_p=20), 0)
    out = module_a_spatial(y, d.pilots.s, DetectorConfig(inner_iterations=2), 8)
    assert out.iterations == 2 and not out.converged
    assert out.lam.shape == (200,)


# --- oracle LS --------------------------------------------------------------

def test_oracle_ls_noiseless_exact():
    d, y, h = trial(SMALL, 1, noiseless=True)
    x, flagged = oracle_ls(y, d.pilots.s, d.activity.active_set)
    assert not flagged
    assert rel_err(x, h) < 1e-10


def test_oracle_ls_empty_and_rank_deficient():
    s = generate_pilots(6, 3, 1, np.random.default_rng(0)).s
    y = np.ones((1, 3, 2), complex)
    x, flagged = oracle_ls(y, s, [])
    assert not np.any(x) and not flagged
    x, flagged = oracle_ls(y, s, [0, 1, 2, 3])
    assert flagged and np.all(np.isfinite(x))


def test_oracle_ls_closed_form_nmse(rng):
    d, _, h = trial(SMALL, 2, noiseless=True)
    act = d.activity.active_set
    clean = d.pilots.s @ h
    sigma2 = d.frame.noise_var
    empirical = []
    for _ in range(1000):
        y = clean + complex_normal(clean.shape, sigma2, rng)
        x, _ = oracle_ls(y, d.pilots.s, act)
        empirical.append(np.sum(np.abs(x[:, act] - h[:, act]) ** 2) / np.sum(np.abs(h[:, act]) ** 2))
    expected = oracle_ls_expected_nmse(d.pilots.s[:, :, act], h[:, act], sigma2)
    assert np.mean(empirical) == pytest.approx(expected, rel=0.05)


# --- module B ---------------------------------------------------------------

def test_refine_identity_at_zero_ratio(rng):
    x = complex_normal((2, 3, 16), 1.0, rng)
    assert np.array_equal(module_b_angular_refine(x, 0.0, 8), x)


@pytest.mark.parametrize("rho", [0.0, 0.15, 0.5, 1.0])
def test_refine_keeps_on_grid_los(rho):
    n_r = 8
    theta = math.asin(2 * 2 / n_r)
    row = np.exp(1j * np.pi * np.sin(theta) * np.arange(n_r))
    x = np.concatenate([row, 0.3j * row])[None, None]
    np.testing.assert_allclose(module_b_angular_refine(x, rho, n_r), x, atol=1e-12)


def test_refine_rejects_bad_input(rng):
    with pytest.raises(ConfigError):
        module_b_angular_refine(np.ones((1, 8)), 1.5, 8)
    with pytest.raises(DimensionError):
        module_b_angular_refine(np.ones((1, 12)), 0.2, 8)


def test_refine_improves_nmse_at_5db():
    cfg = ScenarioConfig(snr_db=5.0)
    raw = refined = 0.0
    for i in range(500):
        d = synthesize_trial(cfg, trial_seed(7, i))
        act = d.activity.active_set
        members = tuple(range(7))
        h = d.channels.stacked(members)[:, act]
        x = oracle_ls(d.frame.observation(members), d.pilots.s, act)[0][:, act]
        energy = np.sum(np.abs(h) ** 2)
        raw += np.sum(np.abs(x - h) ** 2) / energy
        refined += np.sum(np.abs(module_b_angular_refine(x, 0.15, 8) - h) ** 2) / energy
    assert refined <= raw


# --- module C ---------------------------------------------------------------

def test_sic_empty_set_unchanged():
    d, y, _ = trial(SMALL, 0)
    st0 = DetectionState.initial(y, 50)
    assert module_c_sic(st0, d.pilots.s, [], np.zeros((4, 0, 56))) is st0


def test_sic_true_channel_cancellation():
    d, y, h = trial(SMALL, 0, noiseless=True)
    act = d.activity.active_set
    st0 = DetectionState.initial(y, 50)
    one = module_c_sic(st0, d.pilots.s, act[:1], h[:, act[:1]])
    rest = d.pilots.s[:, :, act[1:]] @ h[:, act[1:]]
    assert np.max(np.abs(one.residual - rest)) < 1e-12 * np.max(np.abs(y))
    assert not one.remaining[act[0]] and one.detected[act[0]]
    assert not np.any(one.remaining & one.detected)
    full = module_c_sic(one, d.pilots.s, act[1:], h[:, act[1:]])
    assert np.linalg.norm(full.residual) < 1e-10 * np.linalg.norm(y)
    assert [r[:2] for r in full.log] == [(1, 1), (2, 4)]
    with pytest.raises(ValueError):
        module_c_sic(full, d.pilots.s, act[:1], h[:, act[:1]])


# --- SIC driver -------------------------------------------------------------

def test_disabled_sic_equals_single_module_a_pass():
    d, y, _ = trial(ScenarioConfig(t_p=20), 1)
    cfg = DetectorConfig().spatial_only()
    res = detect_anchor(y, d.pilots, cfg, 8)
    out = module_a_spatial(y, d.pilots.s, cfg, 8)
    assert res.rounds == 1
    assert np.array_equal(res.lam, out.lam)
    assert np.array_equal(res.verdict, out.lam >= cfg.activity_threshold)
    on = res.verdict
    # the driver hands Module A an indexed copy of the pilots, so allow BLAS rounding
    np.testing.assert_allclose(res.estimates[:, on], out.x[:, on], rtol=1e-12, atol=0)


@pytest.mark.parametrize("algorithm", ["amp-em", "somp"])
def test_noiseless_desk_detector_exact(algorithm):
    cfg = SMALL.with_(algorithm=algorithm)
    for i in range(3):
        d, _, _ = trial(cfg, i)
        frame = synthesize_received(d.pilots, d.channels, d.frame.coop_sets, 0.0, None)
        res = aggregate_network_verdict(run_sic_detector(frame, d.pilots, cfg.detector()),
                                        d.topology)
        assert np.array_equal(res.verdict, d.activity.mask)


@settings(max_examples=10)
@given(index=st.integers(0, 10_000), t_p=st.integers(8, 30))
def test_residual_monotone_at_zero_noise(index, t_p):
    cfg = SMALL.with_(t_p=t_p)
    d, _, _ = trial(cfg, index)
    frame = synthesize_received(d.pilots, d.channels, d.frame.coop_sets, 0.0, None)
    for res in run_sic_detector(frame, d.pilots, cfg.detector()).values():
        e = np.array(res.residual_energy)
        assert np.all(np.diff(e) <= 1e-9 * e[0])


def test_cancelled_devices_never_reestimated(monkeypatch):
    cfg = ScenarioConfig(t_p=12, n_active=12)
    d, y, _ = trial(cfg, 4, members=(0, 1, 2))
    s = d.pilots.s
    column_id = {s[0, :, j].tobytes(): j for j in range(s.shape[2])}
    seen = []
    real = det.module_a_spatial

    def spy(y_, s_, *args, **kw):
        seen.append({column_id[s_[0, :, j].tobytes()] for j in range(s_.shape[2])})
        return real(y_, s_, *args, **kw)

    monkeypatch.setattr(det, "module_a_spatial", spy)
    res = detect_anchor(y, d.pilots, cfg.detector(), 8)
    assert res.rounds >= 2 and len(seen) == res.rounds
    assert seen[0] == set(range(200))
    for r in range(1, len(seen)):
        assert seen[r] < seen[r - 1]
        assert len(seen[r - 1] - seen[r]) == res.round_log[r - 1][1]
    cancelled = set(range(200)) - seen[-1]
    assert cancelled <= set(np.flatnonzero(res.verdict))


def test_cloud_equals_edge_with_all_haps():
    cfg = ScenarioConfig(t_p=16)
    for i in range(2):
        d = synthesize_trial(cfg, trial_seed(cfg.master_seed, i))
        cloud = detect(d, cfg.with_(mode="cloud"))
        edge = detect(d, cfg.with_(mode="edge", n_co=7))
        assert np.array_equal(cloud.verdict, edge.verdict)
        assert np.array_equal(cloud.estimates, edge.estimates)


# --- cellular ---------------------------------------------------------------

def _single_hap_scene(seed):
    rng = np.random.default_rng(seed)
    haps = build_hex_deployment(1, 1.0, n_antennas=8)
    topo = build_topology(haps, 50_000.0, 60, rng)
    act = ActivityPattern(np.sort(rng.choice(60, 4, replace=False)), 60)
    gains = large_scale_gains(topo, 2e9)
    ch = assemble_access_channels(act, gains, draw_multipath_set(topo, 3, 10.0, 1e-5, rng),
                                  [0.0, 1e5], 8)
    pilots = generate_pilots(60, 16, 2, rng)
    frame = synthesize_received(pilots, ch, build_cooperation_sets(haps, 1),
                                float(np.median(gains)) * 8 / 10, rng)
    return topo, pilots, frame


def test_cellular_single_hap_equals_sic_with_one_member():
    topo, pilots, frame = _single_hap_scene(3)
    cfg = DetectorConfig()
    cell = run_cellular_baseline(frame, pilots, cfg, topo)[0]
    sic = run_sic_detector(frame, pilots, cfg)[0]
    assert np.array_equal(cell.verdict, sic.verdict)
    assert np.array_equal(cell.estimates, sic.estimates)


def test_cellular_out_of_cell_interference():
    haps = build_hex_deployment(7, 86_602.5, n_antennas=8)
    base = build_topology(haps, 50_000.0, 0, np.random.default_rng(0))
    # two devices near HAP 1, two near HAP 2; only a cell-2 device is active
    pos = np.array([haps[1].nadir + 1e3, haps[1].nadir - 1e3,
                    haps[2].nadir + 2e3, haps[2].nadir - 2e3])
    topo = with_devices(base, pos)
    assert list(topo.cell_assignment) == [1, 1, 2, 2]
    rng = np.random.default_rng(5)
    act = ActivityPattern(np.array([2]), 4)
    ch = assemble_access_channels(act, large_scale_gains(topo, 2e9),
                                  draw_multipath_set(topo, 3, 10.0, 1e-5, rng), [0.0], 8)
    pilots = generate_pilots(4, 20, 1, rng)
    noise_var = 1e-3 * float(np.mean(np.abs(ch.h[0, 1, 2]) ** 2))
    frame = synthesize_received(pilots, ch, build_cooperation_sets(haps, 1), noise_var, rng)
    res = run_cellular_baseline(frame, pilots, DetectorConfig(), topo)
    assert not res[1].verdict[2] and not np.any(res[1].estimates[:, 2])
    noise_energy = noise_var * 20 * 8
    assert res[1].residual_energy[0] > 10 * noise_energy
    assert res[2].verdict[2]


# --- aggregation ------------------------------------------------------------

def _anchor(anchor, members, verdict, n_p=1, n_r=2):
    verdict = np.asarray(verdict, bool)
    k = verdict.size
    est = np.zeros((n_p, k, len(members) * n_r), complex)
    est[:, verdict] = anchor + 1
    return AnchorResult(anchor, tuple(members), verdict.astype(float), verdict, est, 1, [], [0.0],
                        True)


def test_aggregation_identity_and_nearest_wins():
    haps = build_hex_deployment(7, 100.0, n_antennas=2)
    topo = with_devices(build_topology(haps, 60.0, 0, np.random.default_rng(0)),
                        [haps[0].nadir, haps[1].nadir + 1.0, haps[4].nadir])
    single = aggregate_network_verdict({0: _anchor(0, range(7), [1, 0, 1])}, topo)
    assert list(single.verdict) == [True, False, True]
    assert np.all(single.estimates[:, :, 0] == 1) and not np.any(single.estimates[:, :, 1])

    a0 = _anchor(0, (0, 1, 2), [1, 1, 1])
    a1 = _anchor(1, (1, 0, 2), [0, 0, 0])
    out = aggregate_network_verdict({0: a0, 1: a1}, topo)
    # device 1 sits next to HAP 1, so anchor 1's "inactive" wins; device 2 is
    # nearer HAP 0 than HAP 1
    assert list(out.verdict) == [True, False, True]
    assert np.all(out.estimates[:, [0, 1, 2], 0] == 1)
    assert not np.any(out.estimates[:, 3:, 0])
    with pytest.raises(ValueError):
        aggregate_network_verdict({}, topo)
