"""Command-line driver: generate / train / eval / infer / ablate / sweep-tau.

Every run prints its resolved configuration first, so any result can be
reproduced from the captured stdout alone.  Errors map to distinct exit
codes (see --help) and print a single machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

from . import fileio
from .synth import SceneConfig, gen_sequence, load_dataset, regime_a, regime_b, write_dataset
from .trainer import (
    ABLATION_FAMILIES, ConfigError, NumericFailure, TAU_SWEEP, TrainConfig,
    _svg_polyline, ablate, build_model, evaluate, load_checkpoint, sweep_tau,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

SEED_ENV_VAR = "DYNSAL_SEED"

_EPILOG = f"""\
configuration:
  values are resolved in order: built-in defaults, then {SEED_ENV_VAR}
  (default seed only), then --config file, then --set overrides, then
  --seed; later sources win.

exit codes:
  {EXIT_OK}  success
  {EXIT_USAGE}  usage error (unknown subcommand or flag)
  {EXIT_IO}  I/O error (missing or unreadable file)
  {EXIT_CONFIG}  configuration error (unknown key, bad value, variant mismatch)
  {EXIT_NUMERIC}  numeric failure (non-finite value during training)
"""

PRESETS = {"regime-a": regime_a, "regime-b": regime_b}
MAP_NAMES = ("S_s", "S_t", "S_c", "S_f")


# ----------------------------------------------------------------------
# config assembly
# ----------------------------------------------------------------------

def _parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _assemble(base: dict[str, object], config_path: str | None,
              overrides: Sequence[str], seed_flag: int | None) -> dict[str, str]:
    """Merge config sources; the env var supplies only a fallback seed."""
    raw = {k: str(v) for k, v in base.items()}
    seed_set = False
    if config_path:
        from_file = fileio.parse_config_text(Path(config_path).read_text())
        seed_set = "seed" in from_file
        raw.update(from_file)
    parsed = _parse_overrides(overrides)
    seed_set = seed_set or "seed" in parsed
    raw.update(parsed)
    if seed_flag is not None:
        raw["seed"] = str(seed_flag)
        seed_set = True
    if not seed_set and os.environ.get(SEED_ENV_VAR):
        raw["seed"] = os.environ[SEED_ENV_VAR]
    return raw


def _resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    raw = _assemble(TrainConfig().to_dict(), args.config, args.set, args.seed)
    return TrainConfig.from_dict(raw)


def _resolve_scene_config(args: argparse.Namespace) -> SceneConfig:
    base = PRESETS[args.preset]() if args.preset else SceneConfig()
    raw = _assemble(base.to_dict(), args.config, args.set, args.seed)
    return SceneConfig.from_dict(raw)


def _print_resolved(values: dict[str, object], **paths: object) -> None:
    block = dict(values)
    for key, val in paths.items():
        if val is not None:
            block[key] = val
    sys.stdout.write("# resolved config\n")
    sys.stdout.write(fileio.format_config(block))
    sys.stdout.flush()


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve_scene_config(args)
    _print_resolved(cfg.to_dict(), out=args.out)
    samples = gen_sequence(cfg)
    write_dataset(args.out, samples, cfg)
    print(f"wrote {len(samples)} frames to {args.out}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_train_config(args)
    samples, _ = load_dataset(args.data)
    _print_resolved(cfg.to_dict(), data=args.data, out=args.out)
    result = train(cfg, samples, args.out)
    if args.svg:
        points = [(float(i), rep.total) for i, rep in enumerate(result.reports)]
        svg_path = Path(args.out) / "loss_curve.svg"
        svg_path.write_text(_svg_polyline(
            points, f"training loss ({cfg.variant})", "iteration", "total loss"))
    print(f"final_loss = {result.reports[-1].total}")
    print(f"checkpoint = {result.checkpoint_dir}")
    if result.flagged:
        print("warning: loss not non-increasing over a 200-iteration window")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    samples, _ = load_dataset(args.data)
    _print_resolved({"ckpt": args.ckpt, "expect_variant": args.expect_variant,
                     "svg": args.svg}, data=args.data, out=args.out)
    report = evaluate(args.ckpt, samples, out_dir=args.out,
                      expect_variant=args.expect_variant, svg=args.svg)
    print(f"variant = {report.variant}")
    print(f"max_f = {report.max_f}")
    print(f"s_measure = {report.s_measure}")
    print(f"mae = {report.mae}")
    if report.eps_s_mean is not None:
        print(f"eps_s_mean = {report.eps_s_mean}")
        print(f"eps_t_mean = {report.eps_t_mean}")
    return EXIT_OK


def _cmd_infer(args: argparse.Namespace) -> int:
    samples, _ = load_dataset(args.data)
    if args.index is not None:
        if not 0 <= args.index < len(samples):
            raise ConfigError(
                f"index {args.index} out of range for {len(samples)} frames")
        picked = [(args.index, samples[args.index])]
    else:
        picked = list(enumerate(samples))
    _print_resolved({"ckpt": args.ckpt, "index": args.index},
                    data=args.data, out=args.out)

    ckpt = load_checkpoint(args.ckpt)
    out_dir = Path(args.out)
    model = None
    if not ckpt.is_stub:
        model = build_model(ckpt)
        model.set_trainable(False)

    written = 0
    for idx, sample in picked:
        if model is None:
            maps = {name: sample.mask for name in MAP_NAMES}
        else:
            result = model.forward(
                sample.frame[None] if model.plan.spatial else None,
                sample.flow_image[None] if model.plan.temporal else None)
            tensors = {"S_s": result.s_s, "S_t": result.s_t,
                       "S_c": result.s_c, "S_f": result.s_f}
            maps = {name: t.data[0, 0] for name, t in tensors.items()
                    if t is not None}
        for name, values in maps.items():
            path = out_dir / name / f"{idx:05d}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            fileio.write_map(values, path)
            written += 1
    print(f"wrote {written} maps to {args.out}")
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve_train_config(args)
    samples, _ = load_dataset(args.data)
    _print_resolved(cfg.to_dict(), data=args.data, out=args.out,
                    families=",".join(args.families or ABLATION_FAMILIES))
    tables = ablate(cfg, samples, args.out, families=args.families)
    for family, rows in tables.items():
        for name, rep in rows:
            print(f"{family} {name} max_f={rep.max_f:.4f} "
                  f"s_measure={rep.s_measure:.4f} mae={rep.mae:.4f}")
    return EXIT_OK


def _cmd_sweep_tau(args: argparse.Namespace) -> int:
    cfg = _resolve_train_config(args)
    samples, _ = load_dataset(args.data)
    taus = tuple(float(t) for t in args.taus.split(",")) if args.taus else TAU_SWEEP
    _print_resolved(cfg.to_dict(), data=args.data, out=args.out,
                    taus=",".join(str(t) for t in taus))
    rows = sweep_tau(cfg, samples, args.out, taus=taus)
    for tau, rep in rows:
        print(f"tau={tau} max_f={rep.max_f:.4f} "
              f"s_measure={rep.s_measure:.4f} mae={rep.mae:.4f}")
    if args.svg:
        points = [(float(tau), rep.max_f) for tau, rep in rows]
        svg_path = Path(args.out) / "tau_sweep.svg"
        svg_path.write_text(_svg_polyline(points, "tau sweep", "tau", "max F"))
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="plain-text key = value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--seed", type=int, help="override the random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynsal",
        description="dynamic two-branch video salient object detection",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="subcommand", required=True,
                                 metavar="{generate,train,eval,infer,ablate,sweep-tau}")

    gen = subs.add_parser("generate", help="write a synthetic video dataset")
    gen.add_argument("--preset", choices=sorted(PRESETS),
                     help="start from a shipped scene preset")
    gen.add_argument("--out", required=True, help="dataset directory to create")
    _add_config_flags(gen)
    gen.set_defaults(func=_cmd_generate)

    tr = subs.add_parser("train", help="train one model variant")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="run directory for log and checkpoint")
    tr.add_argument("--svg", action="store_true", help="also write loss_curve.svg")
    _add_config_flags(tr)
    tr.set_defaults(func=_cmd_train)

    ev = subs.add_parser("eval", help="score a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True, help="checkpoint directory")
    ev.add_argument("--data", required=True, help="dataset directory")
    ev.add_argument("--out", help="where to write eval_report.csv and pr_curve.csv")
    ev.add_argument("--expect-variant", help="fail unless the checkpoint has this variant")
    ev.add_argument("--svg", action="store_true", help="also write pr_curve.svg")
    ev.set_defaults(func=_cmd_eval)

    inf = subs.add_parser("infer", help="write S_s/S_t/S_c/S_f maps as PNGs")
    inf.add_argument("--ckpt", required=True, help="checkpoint directory")
    inf.add_argument("--data", required=True, help="dataset directory")
    inf.add_argument("--out", required=True, help="output directory")
    inf.add_argument("--index", type=int, help="single frame index (default: all)")
    inf.set_defaults(func=_cmd_infer)

    ab = subs.add_parser("ablate", help="train and tabulate ablation variants")
    ab.add_argument("--data", required=True, help="dataset directory")
    ab.add_argument("--out", required=True, help="output directory for tables")
    ab.add_argument("--families", nargs="+", choices=sorted(ABLATION_FAMILIES),
                    help="ablation families (default: all)")
    _add_config_flags(ab)
    ab.set_defaults(func=_cmd_ablate)

    sw = subs.add_parser("sweep-tau", help="train the proposed variant over a tau grid")
    sw.add_argument("--data", required=True, help="dataset directory")
    sw.add_argument("--out", required=True, help="output directory for the table")
    sw.add_argument("--taus", help="comma-separated grid (default: 0.2,0.4,0.6,0.8,1.0)")
    sw.add_argument("--svg", action="store_true", help="also write tau_sweep.svg")
    _add_config_flags(sw)
    sw.set_defaults(func=_cmd_sweep_tau)

    return parser


def _single_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message; keep its code
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"error: numeric: {_single_line(exc)}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"error: config: {_single_line(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except fileio.FlowFormatError as exc:
        print(f"error: io: {_single_line(exc)}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: io: {_single_line(exc)}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: config: {_single_line(exc)}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
