"""Mask-type and spatial-cue ablation on one stratified batch, summarized per separation bucket.

    python3 scripts/ablation_table.py --n 75 --out runs/ablation
"""
import argparse
from dataclasses import replace
from pathlib import Path

from spkloc.pipeline import PipelineConfig, generate_batch, run_batch
from spkloc.report import BUCKETS, build_report
from spkloc.room_sim import ScenarioConstraints

VARIANTS = {
    "pass-through": PipelineConfig(mask_provider="pass-through"),
    "icm": PipelineConfig(mask_provider="oracle-complex"),
    "irm": PipelineConfig(),
    "irm+beam": PipelineConfig(use_df_beam=True),
    "irm+angle": PipelineConfig(use_df_angle=True),
    "irm+beam+angle": PipelineConfig(use_df_beam=True, use_df_angle=True),
    "irm+angle@oracle-doa": PipelineConfig(use_df_angle=True, doa_source="oracle-angle"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=75, help="scenarios (stratified over the three buckets)")
    ap.add_argument("--seed", type=int, default=104)
    ap.add_argument("--rt60", type=float, default=0.0, help="0 renders anechoic rooms")
    ap.add_argument("--duration", type=float, default=4.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    scen = out / "scenarios"
    if not (scen / "manifest.json").exists():
        c = replace(ScenarioConstraints(), rt60_range=(args.rt60, args.rt60))
        generate_batch(args.n, scen, args.seed, c, args.duration, stratify=True, workers=args.workers)
    batches = []
    for name, cfg in VARIANTS.items():
        d = out / name
        run_batch(replace(cfg, name=name, save_wavs=False), scen, d, args.workers)
        batches.append(d / "batch.json")
    rep = build_report(batches, out)

    cols = ("all",) + BUCKETS
    print(f"{'method':<22}" + "".join(f"{c:>10}" for c in cols) + "   (mean SI-SDR improvement, dB)")
    for name in VARIANTS:
        cells = {s["bucket"]: s["mean_si_sdr_improvement"] for s in rep["summary"]
                 if s["method"] == name and s["f0_pairing"] == "all"}
        print(f"{name:<22}" + "".join(f"{cells.get(c, float('nan')):>10.2f}" for c in cols))
    print(f"\nreport: {out / 'report.csv'}")


if __name__ == "__main__":
    main()
