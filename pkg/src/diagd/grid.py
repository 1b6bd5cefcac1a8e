"""Coordinates, geometries and decode configurations for token grids.

A video of ``T`` generated frames, each ``h x w`` tokens, is addressed by
``Coordinate(frame, row, col)``. Prompt frames use negative frame indices
``-P .. -1`` so that every formula for generated frames starts at ``t = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import BoundsError, ConfigError

POLICIES = ("raster", "temporal")

EMPTY, PROMPT, GENERATED = 0, 1, 2


class Coordinate(NamedTuple):
    frame: int
    row: int
    col: int


@dataclass(frozen=True)
class GridGeometry:
    frames: int
    height: int
    width: int
    prompt_frames: int = 0
    vocab: int = 16

    def __post_init__(self):
        for name in ("frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.prompt_frames < 0:
            raise ConfigError(f"prompt_frames must be >= 0, got {self.prompt_frames}")
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")

    @property
    def tokens_per_frame(self) -> int:
        return self.height * self.width

    @property
    def num_tokens(self) -> int:
        """Generated tokens only (prompt frames excluded)."""
        return self.frames * self.height * self.width

    @property
    def num_positions(self) -> int:
        """Prompt plus generated positions in the flattened sequence."""
        return (self.prompt_frames + self.frames) * self.height * self.width

    def contains(self, c: Coordinate) -> bool:
        return (-self.prompt_frames <= c[0] < self.frames
                and 0 <= c[1] < self.height and 0 <= c[2] < self.width)

    def check(self, c: Coordinate) -> Coordinate:
        if not self.contains(c):
            raise BoundsError(f"coordinate {tuple(c)} outside {self}")
        return Coordinate(*c)

    def coords(self, include_prompt: bool = False) -> Iterator[Coordinate]:
        """All coordinates in raster order."""
        start = -self.prompt_frames if include_prompt else 0
        for t in range(start, self.frames):
            for i in range(self.height):
                for j in range(self.width):
                    yield Coordinate(t, i, j)

    def sequence_index(self, c: Coordinate) -> int:
        """Position of ``c`` in the flattened prompt+generated sequence."""
        c = self.check(c)
        return (c.frame + self.prompt_frames) * self.tokens_per_frame + c.row * self.width + c.col

    def sequence_coord(self, index: int) -> Coordinate:
        if not 0 <= index < self.num_positions:
            raise BoundsError(f"sequence index {index} outside [0, {self.num_positions})")
        f, rem = divmod(index, self.tokens_per_frame)
        i, j = divmod(rem, self.width)
        return Coordinate(f - self.prompt_frames, i, j)


@dataclass(frozen=True)
class DiagConfig:
    """Spatial window ``k``, temporal delay ``d`` and predecessor policy.

    With ``temporal=False`` frames are decoded back to back and ``d`` is
    ignored (the effective delay is the per-frame step count).
    """

    k: int
    d: Optional[int] = None
    temporal: bool = True
    policy: str = "raster"

    @classmethod
    def raster(cls, geom: GridGeometry, policy: str = "raster") -> "DiagConfig":
        """The degenerate configuration that reproduces next-token order."""
        return cls(k=geom.width, d=None, temporal=False, policy=policy)

    def effective_d(self, geom: GridGeometry) -> int:
        s_spa = spatial_steps(geom, self.k)
        if not self.temporal:
            return s_spa
        if self.d is None:
            raise ConfigError("temporal mode requires d")
        return self.d

    def is_degenerate(self, geom: GridGeometry) -> bool:
        return self.k == geom.width and self.effective_d(geom) == spatial_steps(geom, self.k)


def spatial_steps(geom: GridGeometry, k: int) -> int:
    return (geom.height - 1) * k + geom.width


def raster_index(geom: GridGeometry, c: Coordinate) -> int:
    t, i, j = c
    if t < 0 or not geom.contains(c):
        raise BoundsError(f"coordinate {tuple(c)} is not a generated position of {geom}")
    return t * geom.height * geom.width + i * geom.width + j


def raster_coord(geom: GridGeometry, index: int) -> Coordinate:
    if not 0 <= index < geom.num_tokens:
        raise BoundsError(f"raster index {index} outside [0, {geom.num_tokens})")
    t, rem = divmod(index, geom.tokens_per_frame)
    i, j = divmod(rem, geom.width)
    return Coordinate(t, i, j)


def validate_config(geom: GridGeometry, cfg: DiagConfig) -> int:
    """Check ``cfg`` against ``geom`` and return the per-frame step count."""
    if cfg.policy not in POLICIES:
        raise ConfigError(f"unknown predecessor policy {cfg.policy!r}; expected one of {POLICIES}")
    if not 1 <= cfg.k <= geom.width:
        raise ConfigError(f"k={cfg.k} outside [1, w={geom.width}]")
    s_spa = spatial_steps(geom, cfg.k)
    if cfg.temporal:
        if cfg.d is None:
            raise ConfigError("temporal mode requires d")
        if not 1 <= cfg.d <= s_spa:
            raise ConfigError(f"d={cfg.d} outside [1, s_spa={s_spa}] for h={geom.height}, w={geom.width}, k={cfg.k}")
    return s_spa


def config_header(geom: GridGeometry, cfg: Optional[DiagConfig] = None) -> dict:
    """Flat JSON-ready header embedded in every exported artifact."""
    header = {
        "frames": geom.frames,
        "height": geom.height,
        "width": geom.width,
        "prompt_frames": geom.prompt_frames,
        "vocab": geom.vocab,
        "k": None,
        "d": None,
        "temporal": None,
        "policy": None,
    }
    if cfg is not None:
        header.update(k=cfg.k, d=cfg.effective_d(geom), temporal=cfg.temporal, policy=cfg.policy)
    return header


def from_header(header: dict) -> tuple[GridGeometry, Optional[DiagConfig]]:
    geom = GridGeometry(frames=header["frames"], height=header["height"], width=header["width"],
                        prompt_frames=header.get("prompt_frames", 0), vocab=header.get("vocab", 16))
    if header.get("k") is None:
        return geom, None
    temporal = bool(header.get("temporal", True))
    cfg = DiagConfig(k=header["k"], d=header["d"] if temporal else None, temporal=temporal,
                     policy=header.get("policy") or "raster")
    validate_config(geom, cfg)
    return geom, cfg


class TokenGrid:
    """Vocabulary ids over prompt and generated frames, with per-cell provenance.

    Storage is ``(P + T, h, w)``; frame ``t`` lives at index ``t + P``.
    """

    def __init__(self, geom: GridGeometry, prompt: Optional[np.ndarray] = None):
        self.geometry = geom
        shape = (geom.prompt_frames + geom.frames, geom.height, geom.width)
        self.values = np.zeros(shape, dtype=np.int64)
        self.state = np.full(shape, EMPTY, dtype=np.uint8)
        if geom.prompt_frames:
            if prompt is None:
                raise ConfigError(f"geometry declares {geom.prompt_frames} prompt frames but no prompt given")
            prompt = np.asarray(prompt, dtype=np.int64)
            expected = (geom.prompt_frames, geom.height, geom.width)
            if prompt.shape != expected:
                raise ConfigError(f"prompt shape {prompt.shape} != {expected}")
            if prompt.min() < 0 or prompt.max() >= geom.vocab:
                raise ConfigError("prompt ids outside vocabulary")
            self.values[:geom.prompt_frames] = prompt
            self.state[:geom.prompt_frames] = PROMPT
        elif prompt is not None and np.size(prompt):
            raise ConfigError("prompt given for a geometry without prompt frames")

    @classmethod
    def random_prompt(cls, geom: GridGeometry, seed: int) -> "TokenGrid":
        rng = np.random.default_rng(seed)
        prompt = rng.integers(0, geom.vocab, size=(geom.prompt_frames, geom.height, geom.width))
        return cls(geom, prompt if geom.prompt_frames else None)

    def _idx(self, c: Coordinate) -> tuple[int, int, int]:
        c = self.geometry.check(c)
        return c.frame + self.geometry.prompt_frames, c.row, c.col

    def __getitem__(self, c: Coordinate) -> int:
        return int(self.values[self._idx(c)])

    def status(self, c: Coordinate) -> int:
        return int(self.state[self._idx(c)])

    def is_filled(self, c: Coordinate) -> bool:
        return self.state[self._idx(c)] != EMPTY

    def put(self, c: Coordinate, value: int) -> None:
        idx = self._idx(c)
        if c[0] < 0:
            raise BoundsError(f"cannot overwrite prompt coordinate {tuple(c)}")
        if self.state[idx] != EMPTY:
            raise BoundsError(f"coordinate {tuple(c)} written twice")
        if not 0 <= value < self.geometry.vocab:
            raise BoundsError(f"token id {value} outside vocabulary of size {self.geometry.vocab}")
        self.values[idx] = value
        self.state[idx] = GENERATED

    @property
    def generated(self) -> np.ndarray:
        """View of the generated frames, shape ``(T, h, w)``."""
        return self.values[self.geometry.prompt_frames:]

    @property
    def prompt(self) -> np.ndarray:
        return self.values[:self.geometry.prompt_frames]

    def is_complete(self) -> bool:
        return bool((self.state != EMPTY).all())

    def copy(self) -> "TokenGrid":
        out = TokenGrid.__new__(TokenGrid)
        out.geometry = self.geometry
        out.values = self.values.copy()
        out.state = self.state.copy()
        return out

    def to_json(self, cfg: Optional[DiagConfig] = None) -> dict:
        return {
            "config": config_header(self.geometry, cfg),
            "prompt": self.prompt.tolist(),
            "frames": self.generated.tolist(),
            "complete": self.is_complete(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TokenGrid":
        geom, _ = from_header(obj["config"])
        grid = cls(geom, np.asarray(obj["prompt"], dtype=np.int64) if geom.prompt_frames else None)
        grid.values[geom.prompt_frames:] = np.asarray(obj["frames"], dtype=np.int64)
        if obj.get("complete", True):
            grid.state[geom.prompt_frames:] = GENERATED
        return grid
