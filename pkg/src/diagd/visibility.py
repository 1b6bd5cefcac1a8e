"""What each token may attend to under a schedule, and the mask derived from it.

Generated token ``p`` sees every prompt token and every generated token with a
strictly smaller step. Tokens in the same wavefront never see each other.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BoundsError, ConfigError, ResourceError
from .grid import POLICIES, Coordinate, config_header
from .scheduler import Schedule

DEFAULT_MAX_POSITIONS = 1 << 16


def max_positions() -> int:
    return int(os.environ.get("DIAGD_MAX_POSITIONS", DEFAULT_MAX_POSITIONS))


class Visibility:
    """Lazy membership test for ``visible_set(sched, p)``.

    Decode loops query parents one at a time; materializing the full set
    for every token would be quadratic.
    """

    __slots__ = ("schedule", "point", "step")

    def __init__(self, sched: Schedule, p: Coordinate):
        if p[0] < 0:
            raise BoundsError(f"visibility is defined for generated tokens, got prompt {tuple(p)}")
        self.schedule = sched
        self.point = Coordinate(*p)
        self.step = sched.step_of(p)

    def __contains__(self, q) -> bool:
        geom = self.schedule.geometry
        if not geom.contains(q):
            return False
        if q[0] < 0:
            return True
        return self.schedule.steps[q[0], q[1], q[2]] < self.step


def visible_set(sched: Schedule, p: Coordinate) -> frozenset[Coordinate]:
    geom = sched.geometry
    view = Visibility(sched, p)
    prompt = [c for c in geom.coords(include_prompt=True) if c.frame < 0]
    t, i, j = np.nonzero(sched.steps < view.step)
    generated = [Coordinate(int(a), int(b), int(c)) for a, b, c in zip(t, i, j)]
    return frozenset(prompt + generated)


def predecessor(sched: Schedule, p: Coordinate, policy: str = "raster") -> Optional[Coordinate]:
    """The token whose embedding seeds the query that predicts ``p``.

    ``raster``: left neighbour; at a row start, column ``k - 1`` of the
    previous row; at the first token of frame 0, the last prompt token; at
    the first token of a later frame, the highest-raster token generated one
    step earlier. ``temporal``: the same position in the previous frame,
    falling back to the raster rule in frame 0. Returns ``None`` only for
    the very first token of an unprompted grid.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown predecessor policy {policy!r}")
    geom = sched.geometry
    t, i, j = p
    step = sched.step_of(p)
    if policy == "temporal" and t > 0:
        return Coordinate(t - 1, i, j)
    if j > 0:
        return Coordinate(t, i, j - 1)
    if i > 0:
        return Coordinate(t, i - 1, sched.k - 1)
    if t == 0:
        if geom.prompt_frames == 0:
            return None
        return Coordinate(-1, geom.height - 1, geom.width - 1)
    # frame start: one step earlier, max raster index
    return max(sched.wavefront(step - 1))


def raster_predecessor_position(sched: Schedule, p: Coordinate) -> Optional[Coordinate]:
    """Position right before ``p`` in the flattened prompt+generated sequence."""
    geom = sched.geometry
    idx = geom.sequence_index(p)
    return geom.sequence_coord(idx - 1) if idx else None


def order_keys(sched: Schedule) -> np.ndarray:
    """Per sequence position, a key such that q is visible to p iff key[q] < key[p].

    Prompt positions get distinct non-positive keys in raster order (causal
    among themselves); generated positions use their step.
    """
    geom = sched.geometry
    n_prompt = geom.prompt_frames * geom.tokens_per_frame
    prompt_keys = np.arange(n_prompt, dtype=np.int64) - n_prompt
    return np.concatenate([prompt_keys, sched.steps.ravel()])


@dataclass
class VisibilityMask:
    """Dense boolean attention matrix over raster-ordered sequence positions.

    ``bits[p, q]`` is true iff position ``p`` may attend to position ``q``.
    """

    schedule: Schedule
    bits: np.ndarray

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    def schedule_permutation(self) -> np.ndarray:
        """Positions sorted by (step, frame, row, col); prompt positions first."""
        keys = order_keys(self.schedule)
        return np.argsort(keys, kind="stable")

    def permuted(self, order: str = "raster") -> np.ndarray:
        if order == "raster":
            return self.bits
        if order == "schedule":
            perm = self.schedule_permutation()
            return self.bits[np.ix_(perm, perm)]
        raise ConfigError(f"unknown mask order {order!r}")

    def to_pbm(self, order: str = "raster") -> str:
        """Plain (P1) portable bitmap, one row per position; 1 = may attend."""
        bits = self.permuted(order).astype(np.uint8)
        lines = ["P1", f"{self.size} {self.size}"]
        lines.extend(" ".join("1" if b else "0" for b in row) for row in bits)
        return "\n".join(lines) + "\n"

    def sidecar(self, order: str = "raster") -> dict:
        perm = self.schedule_permutation() if order == "schedule" else np.arange(self.size)
        return {
            "config": config_header(self.schedule.geometry, self.schedule.config),
            "order": order,
            "size": self.size,
            "permutation": perm.tolist(),
        }

    def save(self, path: str, order: str = "raster") -> tuple[str, str]:
        with open(path, "w") as fh:
            fh.write(self.to_pbm(order))
        side = path + ".json"
        with open(side, "w") as fh:
            json.dump(self.sidecar(order), fh, indent=1)
        return path, side


def read_pbm(text: str) -> np.ndarray:
    tokens = [tok for line in text.splitlines() if not line.startswith("#") for tok in line.split()]
    if not tokens or tokens[0] != "P1":
        raise ConfigError("not a plain PBM (P1) file")
    cols, rows = int(tokens[1]), int(tokens[2])
    data = np.array([int(t) for t in tokens[3:]], dtype=bool)
    return data.reshape(rows, cols)


def build_finetune_mask(sched: Schedule, cap: Optional[int] = None) -> VisibilityMask:
    """Attention mask aligned with the decode order, for finetuning.

    With the degenerate raster configuration this is exactly the causal mask.
    """
    geom = sched.geometry
    limit = max_positions() if cap is None else cap
    size = geom.num_positions
    if size > limit:
        raise ResourceError(f"mask needs {size} positions, cap is {limit} (DIAGD_MAX_POSITIONS)")
    keys = order_keys(sched)
    bits = keys[None, :] < keys[:, None]
    np.fill_diagonal(bits, True)
    return VisibilityMask(sched, bits)
