"""``spkloc`` command line: generate, run, localize, report.

Exit codes: 0 success, 2 some rows failed, 1 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import PipelineConfig, generate_batch, localize_batch, run_batch
from .report import build_report
from .room_sim import ScenarioConstraints
from .sources import KINDS

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rt60_range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a value or lo:hi, got {text!r}") from None
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected a value or lo:hi, got {text!r}")
    return vals[0], vals[1]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, default=1, help="scenario-level worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="spkloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="render a scenario batch")
    g.add_argument("-n", "--n-scenarios", type=int, default=50)
    g.add_argument("--constraints", help="ScenarioConstraints JSON file")
    g.add_argument("--rt60", type=_rt60_range, help="rt60 value or lo:hi range in seconds (0 = anechoic)")
    g.add_argument("--n-sources", type=int)
    g.add_argument("--duration", type=float, default=4.0, help="source length in seconds")
    g.add_argument("--kind", action="append", choices=KINDS, help="source kind (repeatable)")
    g.add_argument("--stratify", action="store_true",
                   help="cycle scenarios through the three separation buckets")

    r = sub.add_parser("run", parents=[common], help="extract every target of a batch")
    r.add_argument("scenario_dir")
    r.add_argument("--provider", help="override mask_provider")
    r.add_argument("--df-angle", action="store_true", help="enable DF_angle refinement")
    r.add_argument("--df-beam", action="store_true", help="enable DF_beam refinement")
    r.add_argument("--doa-source", choices=("oracle-angle", "estimated"))
    r.add_argument("--mask-dir", help="directory of .mask files for the from-file provider")
    r.add_argument("--name", help="method label in reports")
    r.add_argument("--no-wavs", action="store_true", help="skip writing extracted WAVs")

    loc = sub.add_parser("localize", parents=[common], help="DOA estimate per target")
    loc.add_argument("scenario_dir")
    loc.add_argument("--provider", default="oracle-binary")

    rep = sub.add_parser("report", parents=[common], help="aggregate batch files to CSV/JSON")
    rep.add_argument("batches", nargs="+")
    return p


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "provider", None):
        overrides["mask_provider"] = args.provider
    if getattr(args, "df_angle", False):
        overrides["use_df_angle"] = True
    if getattr(args, "df_beam", False):
        overrides["use_df_beam"] = True
    if getattr(args, "doa_source", None):
        overrides["doa_source"] = args.doa_source
    if getattr(args, "mask_dir", None):
        overrides["mask_dir"] = args.mask_dir
    if getattr(args, "name", None):
        overrides["name"] = args.name
    if getattr(args, "no_wavs", False):
        overrides["save_wavs"] = False
    if args.out:
        overrides["output_dir"] = args.out
    return replace(cfg, **overrides)


def _out(args, cfg: PipelineConfig | None = None) -> Path:
    out = args.out or (cfg.output_dir if cfg else None)
    if not out:
        raise UsageError("--out is required (or output_dir in the config)")
    return Path(out)


def cmd_generate(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    seed = args.seed if args.seed is not None else cfg.master_seed
    c = ScenarioConstraints()
    if args.constraints:
        c = ScenarioConstraints.from_dict(json.loads(Path(args.constraints).read_text()))
    if args.rt60 is not None:
        c = replace(c, rt60_range=args.rt60)
    if args.n_sources is not None:
        c = replace(c, n_sources=args.n_sources)
    manifest = generate_batch(args.n_scenarios, _out(args, cfg), seed, c, args.duration,
                              tuple(args.kind or ("harmonic-complex",)), stratify=args.stratify,
                              workers=args.workers)
    print(f"wrote {len(manifest['scenarios'])} scenarios to {_out(args, cfg)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    batch = run_batch(cfg, args.scenario_dir, out, args.workers)
    failed = [r for r in batch["rows"] if r["status"] != "ok"]
    ok = len(batch["rows"]) - len(failed)
    print(f"{cfg.method}: {ok} rows ok, {len(failed)} failed -> {out / 'batch.json'}")
    for r in failed:
        print(f"  failed {r['scenario']} target {r['target']}: {r['error']}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_localize(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    out = _out(args, cfg)
    rep = localize_batch(args.scenario_dir, args.provider, out, args.workers, cfg.stft)
    s = rep["summary"]
    print(f"{s['n']} targets: median error {s['median_doa_error']:.2f} deg, "
          f"{100 * s['frac_within_5deg']:.1f}% within 5 deg -> {out / 'localize.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out(args)
    rep = build_report(args.batches, out)
    print(f"{rep['n_rows']} rows ({rep['n_failed']} failed), {len(rep['summary'])} summary lines "
          f"-> {out / 'report.csv'}")
    return EXIT_PARTIAL if rep["n_failed"] else EXIT_OK


_VERBS = {"generate": cmd_generate, "run": cmd_run, "localize": cmd_localize, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("spkloc: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _VERBS[args.verb](args)
    except (UsageError, ValueError, FileNotFoundError, OSError) as e:
        print(f"spkloc {args.verb}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
