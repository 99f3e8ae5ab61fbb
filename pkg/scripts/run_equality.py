#!/usr/bin/env python3
"""Run the equality experiment and write its JSON report (default: results/equality.json)."""
import argparse
import sys
from pathlib import Path

from loglin.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/equality.json")
    args, rest = ap.parse_known_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sys.exit(main(["exp", "equality", "--out", args.out, *rest]))
