"""Generative models over token grids.

``LocalFieldModel`` is an oracle whose conditional at a coordinate depends only
on the values at a declared list of parent offsets, so equivalence between
decode orders can be proven by construction. ``TinyTransformer`` is a small
seeded pre-norm transformer with a write-once KV cache, used to exercise the
masking and incremental-decoding mechanics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, InvariantError
from .grid import Coordinate, TokenGrid
from .mixer import fold_array, hash_tuple, unit_array

NAMED_OFFSETS = {
    "left": (0, 0, -1),
    "up": (0, -1, 0),
    "prev": (-1, 0, 0),
    "upleft": (0, -1, -1),
    "upright": (0, -1, 1),
    "left2": (0, 0, -2),
    "up2": (0, -2, 0),
    "prev2": (-2, 0, 0),
}

_LFM_TAG = 0x4C464D  # "LFM"


def parse_offsets(spec: str) -> tuple[tuple[int, int, int], ...]:
    """``"left,up,prev"`` or ``"0:-1:1,-1:0:0"`` into offset triples."""
    out = []
    for part in filter(None, (s.strip() for s in spec.split(","))):
        if part in NAMED_OFFSETS:
            out.append(NAMED_OFFSETS[part])
            continue
        try:
            dt, di, dj = (int(x) for x in part.split(":"))
        except ValueError:
            raise ConfigError(f"bad parent offset {part!r}; use a name from {sorted(NAMED_OFFSETS)} or dt:di:dj") from None
        out.append((dt, di, dj))
    return tuple(out)


@dataclass(frozen=True)
class LocalFieldModel:
    vocab: int
    parents: tuple[tuple[int, int, int], ...]
    seed: int = 0
    logit_scale: float = 4.0
    bias: Optional[tuple[float, ...]] = None
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.vocab < 2:
            raise ConfigError("vocab must be >= 2")
        object.__setattr__(self, "parents", tuple(tuple(int(x) for x in off) for off in self.parents))
        for off in self.parents:
            if len(off) != 3 or off[0] > 0 or off == (0, 0, 0):
                raise ConfigError(f"parent offset {off} must have dt <= 0 and be non-zero")
        if self.bias is not None and len(self.bias) != self.vocab:
            raise ConfigError("bias must have one entry per vocabulary id")

    @property
    def sentinel(self) -> int:
        return self.vocab

    def distribution(self, parent_values: tuple[int, ...]) -> np.ndarray:
        """Conditional over the vocabulary given the ordered parent values."""
        probs = self._memo.get(parent_values)
        if probs is None:
            h = hash_tuple(self.seed, (_LFM_TAG, len(parent_values), *parent_values))
            logits = unit_array(fold_array(h, np.arange(self.vocab))) * self.logit_scale
            if self.bias is not None:
                logits = logits + np.asarray(self.bias, dtype=np.float64)
            logits = logits - logits.max()
            probs = np.exp(logits)
            probs /= probs.sum()
            probs.flags.writeable = False
            self._memo[parent_values] = probs
        return probs

    def to_spec(self) -> dict:
        return {"kind": "lfm", "seed": self.seed, "vocab": self.vocab,
                "parents": [list(p) for p in self.parents], "logit_scale": self.logit_scale}


def parent_values(model: LocalFieldModel, grid: TokenGrid, p: Coordinate, visible) -> tuple[int, ...]:
    geom = grid.geometry
    vals = []
    for dt, di, dj in model.parents:
        q = Coordinate(p[0] + dt, p[1] + di, p[2] + dj)
        if not geom.contains(q) or q not in visible:
            vals.append(model.sentinel)
        elif not grid.is_filled(q):
            raise InvariantError(f"parent {tuple(q)} of {tuple(p)} is visible but not yet decoded")
        else:
            vals.append(grid[q])
    return tuple(vals)


def lfm_conditional(model: LocalFieldModel, grid: TokenGrid, p: Coordinate, visible) -> np.ndarray:
    """Distribution of the token at ``p`` given what ``visible`` exposes.

    ``visible`` is any container of coordinates; parents outside the grid or
    not in ``visible`` read as the sentinel id.
    """
    grid.geometry.check(p)
    return model.distribution(parent_values(model, grid, p, visible))


# ---------------------------------------------------------------------------
# Tiny transformer
# ---------------------------------------------------------------------------

def _layer_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


class KVCache:
    """Per-position keys and values for every layer; each position written once.

    Entries are keyed by sequence position (``-1`` for the start token).
    A cache belongs to a single decode session.
    """

    def __init__(self):
        self._entries: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __contains__(self, key: int) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self) -> list[int]:
        return sorted(self._entries)

    def put(self, key: int, k: np.ndarray, v: np.ndarray) -> None:
        if key in self._entries:
            raise InvariantError(f"KV entry for position {key} written twice")
        k = np.array(k)
        v = np.array(v)
        k.flags.writeable = False
        v.flags.writeable = False
        self._entries[key] = (k, v)

    def gather(self, keys: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(layers, len(keys), heads, head_dim)`` keys and values."""
        try:
            ks = [self._entries[key][0] for key in keys]
            vs = [self._entries[key][1] for key in keys]
        except KeyError as exc:
            raise InvariantError(f"context position {exc.args[0]} not in KV cache") from None
        return np.stack(ks, axis=1), np.stack(vs, axis=1)


class TinyTransformer:
    """Pre-norm decoder-only transformer with factorized (t, i, j) positions.

    Token id ``vocab`` is a start token placed at a position with a zero
    positional code. Weights are a pure function of the shape arguments and
    ``weight_seed``.
    """

    def __init__(self, vocab: int, layers: int = 2, model_dim: int = 64, heads: int = 4,
                 max_frames: int = 16, max_height: int = 64, max_width: int = 64,
                 weight_seed: int = 0, uniform_attention: bool = False):
        if model_dim % heads or model_dim % 2:
            raise ConfigError("model_dim must be even and divisible by heads")
        self.vocab = vocab
        self.layers = layers
        self.model_dim = model_dim
        self.heads = heads
        self.head_dim = model_dim // heads
        self.max_frames = max_frames
        self.max_height = max_height
        self.max_width = max_width
        self.weight_seed = weight_seed
        self.uniform_attention = uniform_attention
        self.bos = vocab

        D = model_dim
        rng = np.random.default_rng(weight_seed)
        self.tok_emb = rng.standard_normal((vocab + 1, D))
        self.pos_proj = rng.standard_normal((3, D, D)) / math.sqrt(D)
        self.blocks = []
        for _ in range(layers):
            blk = {
                "ln1": np.ones(D),
                "wq": rng.standard_normal((D, D)) / math.sqrt(D),
                "wk": rng.standard_normal((D, D)) / math.sqrt(D),
                "wv": rng.standard_normal((D, D)) / math.sqrt(D),
                "wo": rng.standard_normal((D, D)) / math.sqrt(D),
                "ln2": np.ones(D),
                "w1": rng.standard_normal((D, 4 * D)) / math.sqrt(D),
                "w2": rng.standard_normal((4 * D, D)) / math.sqrt(4 * D),
            }
            if uniform_attention:
                blk["wq"] = np.zeros((D, D))
            self.blocks.append(blk)
        self.ln_f = np.ones(D)
        self.w_out = rng.standard_normal((D, vocab)) * (2.0 / math.sqrt(D))
        half = D // 2
        self._freqs = 1.0 / (100.0 ** (np.arange(half) / half))

    def weight_bytes(self) -> bytes:
        parts = [self.tok_emb, self.pos_proj, self.ln_f, self.w_out]
        for blk in self.blocks:
            parts.extend(blk[name] for name in sorted(blk))
        return b"".join(np.ascontiguousarray(a).tobytes() for a in parts)

    def to_spec(self) -> dict:
        return {"kind": "tt", "seed": self.weight_seed, "vocab": self.vocab,
                "dims": {"layers": self.layers, "model_dim": self.model_dim, "heads": self.heads,
                         "max_frames": self.max_frames, "max_height": self.max_height,
                         "max_width": self.max_width}}

    # -- embeddings --------------------------------------------------------

    def _sinusoid(self, x: int) -> np.ndarray:
        ang = x * self._freqs
        return np.concatenate([np.sin(ang), np.cos(ang)])

    def position_code(self, c: Optional[Coordinate]) -> np.ndarray:
        if c is None:
            return np.zeros(self.model_dim)
        t, i, j = c
        if not (-self.max_frames < t < self.max_frames and 0 <= i < self.max_height and 0 <= j < self.max_width):
            raise BoundsError(f"position {tuple(c)} exceeds model limits "
                              f"(frames {self.max_frames}, height {self.max_height}, width {self.max_width})")
        return sum(self._sinusoid(x) @ self.pos_proj[a] for a, x in enumerate((t, i, j)))

    def embed(self, token: int, c: Optional[Coordinate]) -> np.ndarray:
        if not 0 <= token <= self.vocab:
            raise BoundsError(f"token id {token} outside [0, {self.vocab}]")
        return self.tok_emb[token] + self.position_code(c)

    def _split(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(*x.shape[:-1], self.heads, self.head_dim)

    def _head(self, x: np.ndarray) -> np.ndarray:
        return _softmax(_layer_norm(x, self.ln_f) @ self.w_out)

    # -- full recompute ----------------------------------------------------

    def forward(self, tokens: Sequence[tuple[Optional[Coordinate], int]], mask: np.ndarray,
                return_attention: bool = False):
        """Process all tokens at once; ``mask[a, b]`` lets token ``a`` attend ``b``.

        Returns ``(probs, attn)`` with ``probs`` of shape ``(n, vocab)`` and
        ``attn`` of shape ``(layers, heads, n, n)`` (or ``None``).
        """
        n = len(tokens)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, n):
            raise ConfigError(f"mask shape {mask.shape} does not match {n} tokens")
        if not mask.diagonal().all():
            raise ConfigError("every token must attend to itself")
        coords = [c for c, _ in tokens]
        if len(set(c for c in coords if c is not None)) != sum(c is not None for c in coords):
            raise ConfigError("token coordinates must be distinct")
        x = np.stack([self.embed(tok, c) for c, tok in tokens])
        scale = 1.0 / math.sqrt(self.head_dim)
        attn_all = []
        for blk in self.blocks:
            h = _layer_norm(x, blk["ln1"])
            q, k, v = (self._split(h @ blk[w]) for w in ("wq", "wk", "wv"))
            scores = np.einsum("ahd,bhd->hab", q, k) * scale
            scores = np.where(mask[None], scores, -np.inf)
            attn = _softmax(scores)
            out = np.einsum("hab,bhd->ahd", attn, v).reshape(n, self.model_dim)
            x = x + out @ blk["wo"]
            x = x + _gelu(_layer_norm(x, blk["ln2"]) @ blk["w1"]) @ blk["w2"]
            if return_attention:
                attn_all.append(attn)
        probs = self._head(x)
        return probs, (np.stack(attn_all) if return_attention else None)

    # -- incremental -------------------------------------------------------

    def step(self, cache: KVCache, token: int, position: Optional[Coordinate],
             context: Sequence[int], write_key: Optional[int] = None) -> np.ndarray:
        """One token against cached context, returning its output distribution.

        ``context`` lists cached positions it may attend to, in the order they
        are concatenated; the token itself is always appended last. With
        ``write_key`` the token's keys/values are stored after all layers ran,
        otherwise they are discarded.
        """
        if write_key is not None and write_key in cache:
            raise InvariantError(f"KV entry for position {write_key} written twice")
        x = self.embed(token, position)[None, :]
        if context:
            ctx_k, ctx_v = cache.gather(context)
        scale = 1.0 / math.sqrt(self.head_dim)
        new_k, new_v = [], []
        for layer, blk in enumerate(self.blocks):
            h = _layer_norm(x, blk["ln1"])
            q, k, v = (self._split(h @ blk[w]) for w in ("wq", "wk", "wv"))
            if context:
                K = np.concatenate([ctx_k[layer], k], axis=0)
                V = np.concatenate([ctx_v[layer], v], axis=0)
            else:
                K, V = k, v
            scores = np.einsum("hd,bhd->hb", q[0], K) * scale
            attn = _softmax(scores)
            out = np.einsum("hb,bhd->hd", attn, V).reshape(1, self.model_dim)
            x = x + out @ blk["wo"]
            x = x + _gelu(_layer_norm(x, blk["ln2"]) @ blk["w1"]) @ blk["w2"]
            new_k.append(k[0])
            new_v.append(v[0])
        if write_key is not None:
            cache.put(write_key, np.stack(new_k), np.stack(new_v))
        return self._head(x)[0]


def tt_forward(model: TinyTransformer, tokens: Sequence[tuple[Optional[Coordinate], int]],
               mask: np.ndarray) -> np.ndarray:
    return model.forward(tokens, mask)[0]


def attention_dump(model: TinyTransformer, grid: TokenGrid, sched, frame: int) -> np.ndarray:
    """Mean attention (over layers and heads) of one frame's queries.

    The completed grid is fed at its own positions under the schedule's
    finetune mask. Rows are the frame's tokens in raster order; columns are
    all sequence positions, prompt first.
    """
    from .visibility import build_finetune_mask

    geom = grid.geometry
    if not -geom.prompt_frames <= frame < geom.frames:
        raise BoundsError(f"frame {frame} outside [{-geom.prompt_frames}, {geom.frames})")
    if not grid.is_complete():
        raise ConfigError("attention dump needs a completed grid")
    coords = list(geom.coords(include_prompt=True))
    tokens = [(c, grid[c]) for c in coords]
    mask = build_finetune_mask(sched).bits
    _, attn = model.forward(tokens, mask, return_attention=True)
    mean = attn.mean(axis=(0, 1))
    start = geom.sequence_index(Coordinate(frame, 0, 0))
    return mean[start:start + geom.tokens_per_frame]


def write_attention_csv(matrix: np.ndarray, path_or_file, first_query: int = 0) -> None:
    """CSV whose header lists context sequence positions; one row per query."""
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["query"] + list(range(matrix.shape[1])))
        for r, row in enumerate(matrix):
            writer.writerow([first_query + r] + [f"{x:.8g}" for x in row])
    finally:
        if own:
            fh.close()
