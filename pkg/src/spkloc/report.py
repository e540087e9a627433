"""Aggregation of batch rows into per-method, per-bucket, per-f0-pairing summaries."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

COLUMNS = ("method", "mask_type", "df_beam", "df_angle", "bucket", "f0_pairing", "n",
           "mean_sdr", "mean_si_sdr", "mean_doa_error", "mean_si_sdr_improvement")
BUCKETS = ("<45", "45-90", ">90")
PAIRINGS = ("same", "different")
_METRICS = {"mean_sdr": "sdr", "mean_si_sdr": "si_sdr", "mean_doa_error": "doa_error",
            "mean_si_sdr_improvement": "si_sdr_improvement"}
_ROW_KEYS = ("method", "mask_type", "df_beam", "df_angle", "bucket", "f0_pairing",
             "sdr", "si_sdr", "doa_error", "si_sdr_improvement")
SDR_NOTE = "sdr is the plain signal-to-error ratio against the reference image, not BSS-Eval SDR"


def load_batch(path) -> list[dict]:
    """Rows of a ``batch.json`` written by the run command."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: cannot read batch file ({e})") from None
    rows = data.get("rows") if isinstance(data, dict) else None
    if not isinstance(rows, list):
        raise ValueError(f"{path}: malformed batch file (no 'rows' list)")
    for i, r in enumerate(rows):
        if not isinstance(r, dict) or "status" not in r:
            raise ValueError(f"{path}: malformed row {i}")
        if r["status"] == "ok":
            missing = [k for k in _ROW_KEYS if k not in r]
            if missing:
                raise ValueError(f"{path}: row {i} lacks {missing}")
    return rows


def aggregate(rows: list[dict]) -> list[dict]:
    """One summary line per (method variant, bucket, f0 pairing), with ``all`` marginals.

    Failed rows are excluded. Lines are sorted for a stable order regardless
    of the order rows arrive in.
    """
    ok = [r for r in rows if r.get("status") == "ok"]
    variants = sorted({(r["method"], r["mask_type"], bool(r["df_beam"]), bool(r["df_angle"])) for r in ok})
    out = []
    for v in variants:
        vrows = [r for r in ok if (r["method"], r["mask_type"], bool(r["df_beam"]), bool(r["df_angle"])) == v]
        for bucket in ("all",) + BUCKETS:
            for pairing in ("all",) + PAIRINGS:
                sel = [r for r in vrows
                       if bucket in ("all", r["bucket"]) and pairing in ("all", r["f0_pairing"])]
                if not sel:
                    continue
                line = dict(zip(COLUMNS[:6], (*v, bucket, pairing)))
                line["n"] = len(sel)
                for col, key in _METRICS.items():
                    line[col] = float(np.mean([r[key] for r in sel]))
                out.append(line)
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for line in summary:
        w.writerow([_fmt(line[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for rec in reader:
            line = {k: rec[k] for k in COLUMNS[:6]}
            for k in ("df_beam", "df_angle"):
                line[k] = rec[k] == "true"
            line["n"] = int(rec["n"])
            for k in _METRICS:
                line[k] = float(rec[k])
            out.append(line)
    return out


def build_report(batch_paths, out_dir=None) -> dict:
    """Summaries over the union of the given batches; writes report.csv / report.json."""
    batch_paths = list(batch_paths)
    if not batch_paths:
        raise ValueError("report needs at least one batch file")
    rows = []
    for p in batch_paths:
        rows.extend(load_batch(p))
    summary = aggregate(rows)
    report = {
        "batches": [Path(p).name for p in batch_paths],
        "n_rows": len(rows),
        "n_failed": sum(r.get("status") != "ok" for r in rows),
        "note": SDR_NOTE,
        "summary": summary,
    }
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(to_csv(summary))
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
