"""Next-token and diagonal decode loops over either model backend.

Sampling draws for coordinate ``p`` come from ``sample_stream(seed, p)``, a
hash of the coordinate, so the value drawn at ``p`` does not depend on when
``p`` is decoded. Two decoders that see the same conditional at every
coordinate therefore produce identical grids.

A diagonal step ``s`` runs in two phases. Phase A feeds the true tokens of
wavefront ``s - 1`` at their own positions (writing KV entries for the
transformer). Phase B predicts every token of wavefront ``s`` from a query
built on its predecessor; query KV is never cached, and queries of the same
step do not see each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, InvariantError, UnsupportedBackendError
from .grid import Coordinate, DiagConfig, TokenGrid, config_header
from .mixer import MASK, fold_array, hash_tuple, mix64_array, unit, unit_array
from .models import KVCache, LocalFieldModel, TinyTransformer, lfm_conditional
from .scheduler import Schedule
from .visibility import Visibility, predecessor, raster_predecessor_position

SAMPLINGS = ("greedy", "stochastic")
_SAMPLE_TAG = 0x53414D50  # "SAMP"
BOS_KEY = -1

Model = Union[LocalFieldModel, TinyTransformer]


def sample_stream(seed: int, p: Coordinate) -> float:
    """Uniform draw in [0, 1) owned by coordinate ``p``."""
    return unit(hash_tuple(seed, (_SAMPLE_TAG, p[0], p[1], p[2])))


def sample_stream_array(seed: int, frames, rows, cols) -> np.ndarray:
    """Vectorized ``sample_stream`` over coordinate arrays."""
    h = mix64_array(np.uint64(seed & MASK))
    for v in (np.full(np.shape(frames), _SAMPLE_TAG), frames, rows, cols):
        h = fold_array(h, v)
    return unit_array(h)


def draw(probs: np.ndarray, u: float, sampling: str) -> int:
    if sampling == "greedy":
        return int(np.argmax(probs))
    if sampling == "stochastic":
        cdf = np.cumsum(probs)
        return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(probs) - 1))
    raise ConfigError(f"unknown sampling {sampling!r}; expected one of {SAMPLINGS}")


@dataclass
class DecodeReport:
    mode: str
    steps: int
    widths: list[int] = field(default_factory=list)
    forward_passes: int = 0
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mode": self.mode, "steps": self.steps, "forward_passes": self.forward_passes,
                "max_width": max(self.widths, default=0), "config": self.config}


def _check_model(model: Model, grid: TokenGrid) -> None:
    geom = grid.geometry
    if not isinstance(model, (LocalFieldModel, TinyTransformer)):
        raise UnsupportedBackendError(f"unsupported model type {type(model).__name__}")
    if model.vocab != geom.vocab:
        raise ConfigError(f"model vocab {model.vocab} != geometry vocab {geom.vocab}")
    if isinstance(model, TinyTransformer):
        if (geom.frames > model.max_frames or geom.prompt_frames >= model.max_frames
                or geom.height > model.max_height or geom.width > model.max_width):
            raise ConfigError(f"geometry {geom} exceeds transformer position limits")


def _prefill(model: TinyTransformer, cache: KVCache, grid: TokenGrid) -> int:
    """Feed the start token and all prompt tokens one at a time."""
    geom = grid.geometry
    model.step(cache, model.bos, None, [], write_key=BOS_KEY)
    passes = 1
    for c in geom.coords(include_prompt=True):
        if c.frame >= 0:
            break
        model.step(cache, grid[c], c, cache.keys(), write_key=geom.sequence_index(c))
        passes += 1
    return passes


def decode_ntp(model: Model, prompt: TokenGrid, sampling: str = "greedy",
               seed: int = 0) -> tuple[TokenGrid, DecodeReport]:
    """Raster-order decoding, one token per step."""
    grid = prompt.copy()
    _check_model(model, grid)
    geom = grid.geometry
    report = DecodeReport(mode="ntp", steps=0, config=config_header(geom, DiagConfig.raster(geom)))
    if isinstance(model, LocalFieldModel):
        prefix = Schedule(geom, DiagConfig.raster(geom))
        for p in geom.coords():
            probs = lfm_conditional(model, grid, p, Visibility(prefix, p))
            grid.put(p, draw(probs, sample_stream(seed, p), sampling))
            report.steps += 1
            report.widths.append(1)
        report.forward_passes = report.steps
        return grid, report

    # output at each fed position predicts the next sequence position
    cache = KVCache()
    last = model.step(cache, model.bos, None, [], write_key=BOS_KEY)
    report.forward_passes = 1
    sequence = list(geom.coords(include_prompt=True))
    for idx, c in enumerate(sequence):
        if c.frame >= 0:
            grid.put(c, draw(last, sample_stream(seed, c), sampling))
            report.steps += 1
            report.widths.append(1)
        if idx + 1 < len(sequence):
            last = model.step(cache, grid[c], c, cache.keys(), write_key=geom.sequence_index(c))
            report.forward_passes += 1
    return grid, report


class DecodeSession:
    """Single-owner diagonal decode of one grid under one schedule."""

    def __init__(self, model: Model, prompt: TokenGrid, sched: Schedule, policy: Optional[str] = None,
                 sampling: str = "greedy", seed: int = 0):
        if prompt.geometry != sched.geometry:
            raise ConfigError("prompt grid and schedule use different geometries")
        if sampling not in SAMPLINGS:
            raise ConfigError(f"unknown sampling {sampling!r}")
        self.grid = prompt.copy()
        _check_model(model, self.grid)
        self.model = model
        self.schedule = sched
        self.policy = policy or sched.config.policy
        self.sampling = sampling
        self.seed = seed
        self.cursor = 0
        self.report = DecodeReport(mode="diagd", steps=0,
                                   config=config_header(sched.geometry, sched.config))
        self.cache: Optional[KVCache] = None
        if isinstance(model, TinyTransformer):
            self.cache = KVCache()
            self.report.forward_passes = _prefill(model, self.cache, self.grid)

    @property
    def done(self) -> bool:
        return self.cursor == self.schedule.total_steps

    def step(self) -> list[Coordinate]:
        if self.done:
            raise InvariantError("session already finished")
        s = self.cursor + 1
        if self.cache is not None and s > 1:
            self._feed(self.schedule.wavefront(s - 1))
        front = self.schedule.wavefront(s)
        draws = [(p, self._predict(p)) for p in front]
        for p, probs in draws:
            self.grid.put(p, draw(probs, sample_stream(self.seed, p), self.sampling))
        self.cursor = s
        self.report.steps = s
        self.report.widths.append(len(front))
        return front

    def run(self) -> tuple[TokenGrid, DecodeReport]:
        while not self.done:
            self.step()
        if not self.grid.is_complete():
            raise InvariantError("schedule finished with empty coordinates")
        return self.grid, self.report

    def _feed(self, front: list[Coordinate]) -> None:
        geom = self.grid.geometry
        context = self.cache.keys()
        for q in front:
            self.model.step(self.cache, self.grid[q], q, context, write_key=geom.sequence_index(q))
            self.report.forward_passes += 1

    def _predict(self, p: Coordinate) -> np.ndarray:
        if isinstance(self.model, LocalFieldModel):
            self.report.forward_passes += 1
            return lfm_conditional(self.model, self.grid, p, Visibility(self.schedule, p))
        geom = self.grid.geometry
        pred = predecessor(self.schedule, p, self.policy)
        if pred is not None and not self.grid.is_filled(pred):
            raise InvariantError(f"predecessor {tuple(pred)} of {tuple(p)} not decoded yet")
        token = self.model.bos if pred is None else self.grid[pred]
        position = raster_predecessor_position(self.schedule, p)
        key = BOS_KEY if position is None else geom.sequence_index(position)
        context = [k for k in self.cache.keys() if k != key]
        self.report.forward_passes += 1
        return self.model.step(self.cache, token, position, context)


def decode_diagd(model: Model, prompt: TokenGrid, sched: Schedule, policy: Optional[str] = None,
                 sampling: str = "greedy", seed: int = 0) -> tuple[TokenGrid, DecodeReport]:
    return DecodeSession(model, prompt, sched, policy, sampling, seed).run()
