"""Throughput arithmetic and oracle-model divergence between decode orders.

Agreement and conditional KL on the local-field oracle stand in for video
quality metrics; they measure how far diagonal decoding drifts from raster
decoding, not perceptual quality.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .decoder import decode_diagd, decode_ntp
from .errors import ConfigError, UnsupportedBackendError
from .grid import DiagConfig, GridGeometry, TokenGrid
from .mixer import hash_tuple
from .models import LocalFieldModel, parent_values
from .scheduler import KNOWN_ROUNDING_DISCREPANCIES, Schedule, preset_rows, round_like, step_count
from .visibility import Visibility


@dataclass(frozen=True)
class CostModel:
    """Affine cost of one forward pass: ``overhead + cost_per_token * width``."""

    overhead_per_step: float
    cost_per_token: float
    tokens_per_frame: Optional[int] = None

    def __post_init__(self):
        if self.overhead_per_step < 0 or self.cost_per_token < 0:
            raise ConfigError("costs must be non-negative")


def _widths(geom: GridGeometry, cfg: Optional[DiagConfig]) -> np.ndarray:
    if cfg is None:
        return np.ones(geom.num_tokens, dtype=np.int64)
    return Schedule(geom, cfg).widths


def throughput_estimate(cost: CostModel, geom: GridGeometry, cfg: Optional[DiagConfig] = None,
                        frames_out: Optional[float] = None) -> dict:
    """Time, FPS and tokens/s for a decode; ``cfg=None`` means next-token decoding.

    ``frames_out`` is the number of output frames the tokens decode to (e.g.
    raw video frames under temporal compression); defaults to ``geom.frames``.
    """
    if cost.tokens_per_frame is not None and cost.tokens_per_frame != geom.tokens_per_frame:
        raise ConfigError(f"cost model is for {cost.tokens_per_frame} tokens/frame, geometry has {geom.tokens_per_frame}")
    widths = _widths(geom, cfg)
    total = float(np.sum(cost.overhead_per_step + cost.cost_per_token * widths))
    if total <= 0:
        raise ConfigError("zero total time: cost model has no cost")
    frames = geom.frames if frames_out is None else frames_out
    return {
        "steps": int(widths.size),
        "total_time": total,
        "fps": frames / total,
        "tokens_per_second": geom.num_tokens / total,
    }


def calibrate(geom: GridGeometry, cfg: DiagConfig, fps_ntp: float, fps_diag: float,
              frames_out: Optional[float] = None) -> CostModel:
    """Solve the two cost parameters so both measured FPS values are met exactly."""
    frames = geom.frames if frames_out is None else frames_out
    n = geom.num_tokens
    s = step_count(geom, cfg)
    # ntp: n*o + n*c = F/fps_ntp ; diag: s*o + n*c = F/fps_diag
    a = np.array([[n, n], [s, n]], dtype=np.float64)
    b = np.array([frames / fps_ntp, frames / fps_diag])
    overhead, per_token = np.linalg.solve(a, b)
    if overhead < 0 or per_token < 0:
        raise ConfigError(f"no non-negative affine cost model fits fps {fps_ntp} / {fps_diag}")
    return CostModel(float(overhead), float(per_token), geom.tokens_per_frame)


@dataclass
class DivergenceReport:
    agreement: float
    mean_positionwise_kl: float
    per_frame_agreement: list[float] = field(default_factory=list)
    per_frame_kl: list[float] = field(default_factory=list)
    rollouts: int = 0
    note: str = "oracle-model agreement and conditional KL; not a video quality metric"

    def as_dict(self) -> dict:
        return {
            "agreement": self.agreement,
            "mean_positionwise_kl": self.mean_positionwise_kl,
            "per_frame_agreement": self.per_frame_agreement,
            "per_frame_kl": self.per_frame_kl,
            "rollouts": self.rollouts,
            "note": self.note,
        }


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


def conditional_kl(model: LocalFieldModel, grid: TokenGrid, sched: Schedule) -> np.ndarray:
    """Per generated coordinate KL(full-prefix conditional || schedule conditional).

    Both conditionals are evaluated on the same completed grid.
    """
    geom = grid.geometry
    prefix = Schedule(geom, DiagConfig.raster(geom))
    out = np.zeros((geom.frames, geom.height, geom.width))
    for p in geom.coords():
        full = parent_values(model, grid, p, Visibility(prefix, p))
        diag = parent_values(model, grid, p, Visibility(sched, p))
        if full != diag:
            out[p] = _kl(model.distribution(full), model.distribution(diag))
    return out


def divergence(model, geom: GridGeometry, cfg: DiagConfig, policy: Optional[str] = None,
               n_rollouts: int = 16, seed: int = 0, sampling: str = "stochastic") -> DivergenceReport:
    """Compare raster and diagonal decodes of the oracle over seeded rollouts."""
    if not isinstance(model, LocalFieldModel):
        raise UnsupportedBackendError("divergence needs exact conditionals (local-field model)")
    if n_rollouts < 1:
        raise ConfigError("n_rollouts must be >= 1")
    sched = Schedule(geom, cfg)
    match = np.zeros(geom.frames)
    kl = np.zeros(geom.frames)
    per_frame = geom.tokens_per_frame * n_rollouts
    for r in range(n_rollouts):
        rseed = hash_tuple(seed, (r,))
        prompt = TokenGrid.random_prompt(geom, rseed)
        ntp, _ = decode_ntp(model, prompt, sampling, rseed)
        diag, _ = decode_diagd(model, prompt, sched, policy, sampling, rseed)
        match += (ntp.generated == diag.generated).sum(axis=(1, 2))
        kl += conditional_kl(model, ntp, sched).sum(axis=(1, 2))
    return DivergenceReport(
        agreement=float(match.sum() / (per_frame * geom.frames)),
        mean_positionwise_kl=float(kl.sum() / (per_frame * geom.frames)),
        per_frame_agreement=(match / per_frame).tolist(),
        per_frame_kl=(kl / per_frame).tolist(),
        rollouts=n_rollouts,
    )


TABLE_FIELDS = ["preset", "k", "d", "temporal", "steps_ntp", "steps_diag", "ratio_exact"]
PUBLISHED_FIELDS = ["published_step", "rounded_step", "published_match"]


def report_tables(presets: Iterable[str], compare_published: bool = False) -> list[dict]:
    """One row per (preset, k, d) with exact step counts and the step ratio."""
    rows = []
    for name in presets:
        geom, entries = preset_rows(name)
        for entry in entries:
            cfg = entry.config
            steps = step_count(geom, cfg)
            row = {
                "preset": name,
                "k": cfg.k,
                "d": cfg.effective_d(geom),
                "temporal": cfg.temporal,
                "steps_ntp": geom.num_tokens,
                "steps_diag": steps,
                "ratio_exact": geom.num_tokens / steps,
            }
            if compare_published:
                rounded = round_like(steps / 1000, entry.published_step)
                known = (name, cfg.k, row["d"]) in KNOWN_ROUNDING_DISCREPANCIES
                row.update(published_step=entry.published_step, rounded_step=rounded,
                           published_match="yes" if rounded == entry.published_step else ("known-rounding" if known else "no"))
            rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = TABLE_FIELDS + [f for f in PUBLISHED_FIELDS if f in rows[0]]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, "ratio_exact": f"{row['ratio_exact']:.6f}"})
    return buf.getvalue()
