from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diagd import ConfigError, Coordinate, DiagConfig, GridGeometry, build_schedule, preset, speedup, step_count
from diagd.scheduler import Schedule

from oracles import simulate_schedule


@st.composite
def geometry_and_config(draw, max_side=12, max_frames=4):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    T = draw(st.integers(1, max_frames))
    k = draw(st.integers(1, w))
    s_spa = (h - 1) * k + w
    if draw(st.booleans()):
        cfg = DiagConfig(k=k, d=draw(st.integers(1, s_spa)))
    else:
        cfg = DiagConfig(k=k, temporal=False)
    return GridGeometry(frames=T, height=h, width=w), cfg


def test_two_by_two_wavefronts():
    sched = build_schedule(GridGeometry(1, 2, 2), DiagConfig(k=1, temporal=False))
    assert sched.total_steps == 3
    assert sched.wavefronts == [[(0, 0, 0)], [(0, 0, 1), (0, 1, 0)], [(0, 1, 1)]]


def test_k_equal_w_is_raster_within_frame():
    g = GridGeometry(1, 4, 5)
    sched = build_schedule(g, DiagConfig(k=5, temporal=False))
    assert sched.total_steps == 20
    assert [wf for wf in sched.wavefronts] == [[c] for c in g.coords()]


def test_cosmos_default():
    assert build_schedule(GridGeometry(3, 40, 64), DiagConfig(k=1, d=40)).total_steps == 183


@pytest.mark.parametrize("geom,cfg,expected", [
    (GridGeometry(3, 40, 64), DiagConfig(k=2, d=80), 302),
    (GridGeometry(100, 18, 30), DiagConfig(k=1, temporal=False), 4700),
    (GridGeometry(15, 14, 24), DiagConfig(k=2, temporal=False), 750),
    (GridGeometry(3, 40, 64), DiagConfig(k=1, d=9), 121),
])
def test_step_count_table_values(geom, cfg, expected):
    assert step_count(geom, cfg) == expected
    assert build_schedule(geom, cfg).total_steps == expected


@settings(max_examples=150, deadline=None)
@given(geometry_and_config(max_side=6, max_frames=3))
def test_schedule_matches_step_simulation(gc):
    geom, cfg = gc
    sched = build_schedule(geom, cfg)
    sim = simulate_schedule(geom.height, geom.width, geom.frames, cfg.k, cfg.effective_d(geom))
    for c, s in sim.items():
        assert sched.step_of(Coordinate(*c)) == s
    assert sched.total_steps == max(sim.values())


@settings(max_examples=200, deadline=None)
@given(geometry_and_config())
def test_schedule_properties(gc):
    geom, cfg = gc
    sched = build_schedule(geom, cfg)
    k, d = cfg.k, cfg.effective_d(geom)
    steps = sched.steps
    t, i, j = np.indices(steps.shape)
    assert (steps == t * d + k * i + j + 1).all()
    # bijection
    flat = [c for wf in sched.wavefronts for c in wf]
    assert len(flat) == len(set(flat)) == geom.num_tokens
    assert all(len(wf) > 0 for wf in sched.wavefronts)
    for s, wf in enumerate(sched.wavefronts, start=1):
        assert wf == sorted(wf)
        assert all(sched.step_of(c) == s for c in wf)
    # dependency monotonicity
    assert (steps[:, :, 1:] > steps[:, :, :-1]).all()
    for jj in range(geom.width):
        reach = min(jj + k - 1, geom.width - 1)
        assert (steps[:, 1:, jj] > steps[:, :-1, reach]).all()
    assert (steps[1:] - steps[:-1] == d).all()
    assert step_count(geom, cfg) == sched.total_steps


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 4))
def test_degenerate_is_raster(h, w, T):
    geom = GridGeometry(T, h, w)
    sched = build_schedule(geom, DiagConfig.raster(geom))
    assert sched.total_steps == T * h * w
    assert (sched.steps.ravel() == np.arange(1, T * h * w + 1)).all()
    sched2 = build_schedule(geom, DiagConfig(k=w, d=h * w))
    assert (sched2.steps == sched.steps).all()


def test_schedule_rejects_invalid_config():
    with pytest.raises(ConfigError):
        build_schedule(GridGeometry(1, 4, 5), DiagConfig(k=6, d=1))


def test_schedule_json_round_trip():
    sched = build_schedule(GridGeometry(2, 3, 4, prompt_frames=1), DiagConfig(k=2, d=3, policy="temporal"))
    again = Schedule.from_json(sched.to_json())
    assert again.total_steps == sched.total_steps
    assert again.wavefronts == sched.wavefronts


def test_speedup_cosmos():
    rep = speedup(GridGeometry(3, 40, 64), DiagConfig(k=1, d=40))
    assert rep.steps_ntp == 7680 and rep.steps_diag == 183
    assert rep.ratio_exact == Fraction(7680, 183)
    assert rep.approx_diag == rep.ratio_exact
    assert float(rep.ratio_exact) == pytest.approx(41.967, abs=1e-3)
    assert rep.ratio_spatial_exact == Fraction(2560, 103)
    assert float(rep.ratio_spatial_exact) == pytest.approx(24.854, abs=1e-3)
    assert float(rep.approx_spatial_appendix) == pytest.approx(40 / 1.625)
    assert rep.approx_spatial_main == Fraction(40, 2)


def test_speedup_approx_diag_not_applicable():
    assert speedup(GridGeometry(3, 40, 64), DiagConfig(k=2, d=80)).approx_diag is None


@given(st.integers(1, 64), st.integers(1, 64))
def test_square_frames_approximations_coincide(h, k):
    k = min(k, h)
    rep = speedup(GridGeometry(2, h, h), DiagConfig(k=k, d=1))
    assert rep.approx_spatial_main == rep.approx_spatial_appendix == Fraction(h, k + 1)


@settings(max_examples=200)
@given(geometry_and_config(max_side=40, max_frames=10))
def test_speedup_identity(gc):
    geom, cfg = gc
    rep = speedup(geom, cfg)
    assert rep.ratio_exact * rep.steps_diag == geom.num_tokens
    assert rep.ratio_exact >= 1
    assert rep.steps_diag <= rep.steps_ntp


def test_presets():
    geom, cfgs = preset("cosmos")
    assert (geom.height, geom.width, geom.frames, geom.prompt_frames) == (40, 64, 3, 2)
    got = {(c.k, c.d): step_count(geom, c) for c in cfgs if c.temporal}
    expected = {(1, 1): 105, (1, 5): 113, (1, 9): 121, (1, 40): 183, (2, 2): 146, (2, 10): 162,
                (2, 18): 178, (2, 80): 302, (4, 4): 228, (4, 12): 244, (4, 20): 260, (4, 36): 292}
    assert got == expected
    wham, wcfgs = preset("wham")
    assert step_count(wham, wcfgs[0]) == wham.num_tokens == 54000
    mcar, mcfgs = preset("mcar")
    assert step_count(mcar, next(c for c in mcfgs if c.k == 4)) == 1140
    with pytest.raises(ConfigError):
        preset("sora")
