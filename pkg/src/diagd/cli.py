"""Command-line entry point: ``diagd <subcommand> [flags]``.

Exit codes: 0 ok, 2 usage, 3 invalid configuration, 4 resource cap,
70 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import analysis
from .decoder import SAMPLINGS, decode_diagd, decode_ntp
from .errors import ConfigError, DiagDError, InvariantError
from .grid import POLICIES, DiagConfig, GridGeometry, TokenGrid, config_header, validate_config
from .models import LocalFieldModel, TinyTransformer, attention_dump, parse_offsets, write_attention_csv
from .scheduler import PRESET_NAMES, Schedule, preset, speedup, step_count
from .visibility import build_finetune_mask

DEFAULT_GEOMETRY = {"frames": 4, "height": 6, "width": 8, "prompt_frames": 0, "vocab": 8}


def _geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--prompt-frames", type=int)
    p.add_argument("--vocab", type=int)


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="spatial window; omit for raster (next-token) order")
    p.add_argument("--d", help="temporal delay: integer, 'h' (= k*h, the default) or 'spa' (spatial-only)")
    p.add_argument("--spatial-only", action="store_true", help="decode frames back to back")
    p.add_argument("--policy", choices=POLICIES, default="raster")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diagd", description="Diagonal decode schedules for token grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, config=True):
        p = sub.add_parser(name, help=help_)
        _geometry_flags(p)
        if config:
            _config_flags(p)
        _common_flags(p)
        return p

    add("steps", "number of forward passes for a configuration")
    p = add("table", "step-count table for presets", config=False)
    p.add_argument("--paper-compare", action="store_true", help="append the published STEP values")
    add("schedule", "export the wavefront schedule as JSON")
    p = add("mask", "export the finetune attention mask as PBM + JSON sidecar")
    p.add_argument("--order", choices=("raster", "schedule"), default="raster")
    for name, help_ in (("decode", "decode a grid"), ("compare", "raster vs diagonal divergence on the oracle"),
                        ("attn", "mean attention of one frame of a decoded grid")):
        p = add(name, help_)
        p.add_argument("--model", choices=("lfm", "tt"), default="lfm")
        p.add_argument("--parents", default="left,up,prev", help="oracle parent offsets")
        p.add_argument("--sampling", choices=SAMPLINGS, default="stochastic")
        if name == "decode":
            p.add_argument("--mode", choices=("ntp", "diagd"), default="diagd")
        if name == "compare":
            p.add_argument("--rollouts", type=int, default=16)
        if name == "attn":
            p.add_argument("--frame", type=int, default=0)
    p = add("bench", "throughput estimate under an affine cost model")
    p.add_argument("--overhead", type=float, default=1.0, help="cost of one forward pass")
    p.add_argument("--per-token", type=float, default=0.0, help="marginal cost per query slot")
    p.add_argument("--calibrate", nargs=2, type=float, metavar=("NTP_FPS", "DIAG_FPS"))
    p.add_argument("--frames-out", type=float, help="output frames the tokens decode to")
    return parser


def resolve_geometry(args, parser) -> GridGeometry:
    explicit = {name: getattr(args, name) for name in DEFAULT_GEOMETRY if getattr(args, name, None) is not None}
    if args.preset:
        shape_flags = set(explicit) & {"frames", "height", "width"}
        if shape_flags:
            parser.error(f"--preset cannot be combined with --{', --'.join(sorted(shape_flags))}")
        geom, _ = preset(args.preset)
        if explicit:
            fields = {**config_header(geom), **explicit}
            geom = GridGeometry(**{k: fields[k] for k in DEFAULT_GEOMETRY})
        return geom
    return GridGeometry(**{**DEFAULT_GEOMETRY, **explicit})


def resolve_config(args, geom: GridGeometry) -> DiagConfig:
    if args.k is None:
        if args.d is not None:
            raise ConfigError("--d needs --k")
        return DiagConfig.raster(geom, policy=args.policy)
    d_arg = args.d if args.d is not None else "h"
    if args.spatial_only or d_arg == "spa":
        cfg = DiagConfig(k=args.k, temporal=False, policy=args.policy)
    else:
        if d_arg == "h":
            d = args.k * geom.height
        else:
            try:
                d = int(d_arg)
            except ValueError:
                raise ConfigError(f"--d must be an integer, 'h' or 'spa', got {d_arg!r}") from None
        cfg = DiagConfig(k=args.k, d=d, temporal=True, policy=args.policy)
    validate_config(geom, cfg)
    return cfg


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _model(args, geom: GridGeometry):
    if args.model == "lfm":
        return LocalFieldModel(vocab=geom.vocab, parents=parse_offsets(args.parents), seed=args.seed)
    return TinyTransformer(vocab=geom.vocab, max_frames=max(geom.frames, geom.prompt_frames + 1),
                           max_height=geom.height, max_width=geom.width, weight_seed=args.seed)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DiagDError as exc:
        print(f"diagd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is a bug
        print(f"diagd: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return InvariantError.exit_code


def _dispatch(args, parser) -> int:
    geom = resolve_geometry(args, parser)
    cmd = args.command

    if cmd == "table":
        names = [args.preset] if args.preset else list(PRESET_NAMES)
        rows = analysis.report_tables(names, compare_published=args.paper_compare)
        if args.format == "json":
            headers = {n: config_header(preset(n)[0]) for n in names}
            _emit(_dumps({"presets": headers, "rows": rows}), args.out)
        else:
            _emit(analysis.rows_to_csv(rows), args.out)
        return 0

    cfg = resolve_config(args, geom)
    header = config_header(geom, cfg)

    if cmd == "steps":
        steps = step_count(geom, cfg)
        if args.format == "json":
            _emit(_dumps({"config": header, "steps": steps, "speedup": speedup(geom, cfg).as_dict()}), args.out)
        else:
            _emit(f"{steps}\n", args.out)
        return 0

    if cmd == "schedule":
        _emit(_dumps(Schedule(geom, cfg).to_json()), args.out)
        return 0

    if cmd == "mask":
        if not args.out:
            raise ConfigError("mask needs --out for the PBM file")
        build_finetune_mask(Schedule(geom, cfg)).save(args.out, order=args.order)
        return 0

    if cmd == "bench":
        if args.calibrate:
            cost = analysis.calibrate(geom, cfg, *args.calibrate, frames_out=args.frames_out)
        else:
            cost = analysis.CostModel(args.overhead, args.per_token)
        ntp = analysis.throughput_estimate(cost, geom, None, args.frames_out)
        diag = analysis.throughput_estimate(cost, geom, cfg, args.frames_out)
        _emit(_dumps({"config": header, "cost": {"overhead_per_step": cost.overhead_per_step,
                                                  "cost_per_token": cost.cost_per_token},
                      "ntp": ntp, "diagd": diag, "fps_ratio": diag["fps"] / ntp["fps"]}), args.out)
        return 0

    model = _model(args, geom)
    sched = Schedule(geom, cfg)

    if cmd == "compare":
        report = analysis.divergence(model, geom, cfg, args.policy, args.rollouts, args.seed, args.sampling)
        _emit(_dumps({"config": header, "model": model.to_spec(), **report.as_dict()}), args.out)
        return 0

    prompt = TokenGrid.random_prompt(geom, args.seed)
    if cmd == "decode":
        if args.mode == "ntp":
            grid, report = decode_ntp(model, prompt, args.sampling, args.seed)
        else:
            grid, report = decode_diagd(model, prompt, sched, args.policy, args.sampling, args.seed)
        obj = grid.to_json(cfg)
        obj.update(model=model.to_spec(), report=report.as_dict())
        _emit(_dumps(obj), args.out)
        return 0

    if cmd == "attn":
        if not isinstance(model, TinyTransformer):
            model = TinyTransformer(vocab=geom.vocab, max_frames=max(geom.frames, geom.prompt_frames + 1),
                                    max_height=geom.height, max_width=geom.width, weight_seed=args.seed)
        grid, _ = decode_diagd(model, prompt, sched, args.policy, args.sampling, args.seed)
        matrix = attention_dump(model, grid, sched, args.frame)
        first = geom.sequence_index((args.frame, 0, 0))
        if args.out:
            write_attention_csv(matrix, args.out, first_query=first)
        else:
            write_attention_csv(matrix, sys.stdout, first_query=first)
        return 0

    parser.error(f"unknown command {cmd}")  # pragma: no cover
    return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
