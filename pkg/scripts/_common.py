"""Shared helpers for the reproduction scripts."""

import argparse
from pathlib import Path


def output_dir(default):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=default, help="directory for the CSV outputs")
    ap.add_argument("--workers", type=int, default=None, help="process count for sweeps")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out, args
