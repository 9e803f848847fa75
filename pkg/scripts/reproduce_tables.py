"""Regenerate the throughput tables from the committed configs.

    python3 scripts/reproduce_tables.py [--out-dir results] [--format csv]

Writes one file per table: no-retransmission rates with delta fitted per rate
(one and two flows), retransmission rows, and the analysis-vs-simulation grid.
"""
import argparse
import logging
from pathlib import Path

from nclab.harness import format_rows, load_config, run_compare, run_sweep

ROOT = Path(__file__).resolve().parents[1]

TABLES = [
    ("no_retx_one_flow", "gamma_sweep_one_flow.yaml", run_sweep),
    ("no_retx_two_flow", "gamma_sweep_two_flow.yaml", run_sweep),
    ("retransmission", "retransmission.yaml", run_compare),
    ("analysis_vs_simulation", "tables.yaml", run_compare),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--format", default="table", choices=("table", "csv", "json"))
    ap.add_argument("--skip-sim", action="store_true", help="skip the simulation grid")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"table": "txt", "csv": "csv", "json": "json"}[args.format]
    for name, cfg_name, fn in TABLES:
        if args.skip_sim and fn is run_compare and cfg_name == "tables.yaml":
            continue
        rows = fn(load_config(ROOT / "configs" / cfg_name))
        text = format_rows(rows, args.format)
        (out / f"{name}.{ext}").write_text(text)
        print(f"== {name} ({cfg_name})")
        print(text if args.format == "table" else f"   -> {out / f'{name}.{ext}'}")


if __name__ == "__main__":
    main()
