import pytest
from hypothesis import given, strategies as st

from diagd import BoundsError, ConfigError, Coordinate, DiagConfig, GridGeometry, TokenGrid
from diagd.grid import config_header, from_header, raster_coord, raster_index, validate_config


def test_raster_index_examples():
    g = GridGeometry(frames=2, height=2, width=3)
    assert raster_index(g, Coordinate(0, 0, 0)) == 0
    assert raster_index(g, Coordinate(1, 1, 2)) == 11
    cosmos = GridGeometry(frames=3, height=40, width=64)
    assert raster_index(cosmos, Coordinate(0, 39, 63)) == 2559


@pytest.mark.parametrize("c", [(2, 0, 0), (0, 2, 0), (0, 0, 3), (-1, 0, 0), (0, -1, 0)])
def test_raster_index_out_of_bounds(c):
    with pytest.raises(BoundsError):
        raster_index(GridGeometry(frames=2, height=2, width=3, prompt_frames=1), Coordinate(*c))


@given(st.integers(1, 6), st.integers(1, 20), st.integers(1, 20), st.data())
def test_raster_round_trip(T, h, w, data):
    g = GridGeometry(frames=T, height=h, width=w)
    c = Coordinate(data.draw(st.integers(0, T - 1)), data.draw(st.integers(0, h - 1)), data.draw(st.integers(0, w - 1)))
    assert raster_coord(g, raster_index(g, c)) == c
    idx = data.draw(st.integers(0, g.num_tokens - 1))
    assert raster_index(g, raster_coord(g, idx)) == idx


def test_validate_config_examples():
    assert validate_config(GridGeometry(3, 40, 64), DiagConfig(k=1, d=40)) == 103
    g = GridGeometry(1, 4, 5)
    with pytest.raises(ConfigError, match="k=6"):
        validate_config(g, DiagConfig(k=6, d=1))
    with pytest.raises(ConfigError, match="s_spa=8"):
        validate_config(g, DiagConfig(k=1, d=9))
    for bad in (DiagConfig(k=0, d=1), DiagConfig(k=1, d=0), DiagConfig(k=1, d=None)):
        with pytest.raises(ConfigError):
            validate_config(g, bad)


@given(st.integers(1, 256), st.integers(1, 256), st.data())
def test_s_spa_closed_form(h, w, data):
    k = data.draw(st.integers(1, w))
    assert validate_config(GridGeometry(1, h, w), DiagConfig(k=k, temporal=False)) == (h - 1) * k + w


def test_spatial_only_forces_full_delay():
    g = GridGeometry(5, 4, 5)
    cfg = DiagConfig(k=2, d=3, temporal=False)
    assert cfg.effective_d(g) == 11
    assert DiagConfig.raster(g).is_degenerate(g)


def test_header_round_trip():
    g = GridGeometry(frames=3, height=4, width=5, prompt_frames=2, vocab=9)
    cfg = DiagConfig(k=2, d=7, policy="temporal")
    header = config_header(g, cfg)
    assert set(header) == {"frames", "height", "width", "prompt_frames", "vocab", "k", "d", "temporal", "policy"}
    assert from_header(header) == (g, cfg)


def test_token_grid_provenance():
    g = GridGeometry(frames=2, height=2, width=2, prompt_frames=1, vocab=5)
    grid = TokenGrid.random_prompt(g, seed=1)
    assert grid.status(Coordinate(-1, 1, 1)) == 1
    assert not grid.is_complete()
    for c in g.coords():
        grid.put(c, 3)
    assert grid.is_complete()
    with pytest.raises(BoundsError):
        grid.put(Coordinate(0, 0, 0), 1)
    with pytest.raises(BoundsError):
        grid.put(Coordinate(-1, 0, 0), 1)
    assert TokenGrid.from_json(grid.to_json()).values.tolist() == grid.values.tolist()


def test_geometry_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        GridGeometry(frames=0, height=1, width=1)
    with pytest.raises(ConfigError):
        GridGeometry(frames=1, height=1, width=1, vocab=1)
