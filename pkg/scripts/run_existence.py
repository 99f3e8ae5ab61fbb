#!/usr/bin/env python3
"""Run the existence experiment and write its JSON report (default: results/existence.json)."""
import argparse
import sys
from pathlib import Path

from loglin.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/existence.json")
    args, rest = ap.parse_known_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sys.exit(main(["exp", "existence", "--out", args.out, *rest]))
