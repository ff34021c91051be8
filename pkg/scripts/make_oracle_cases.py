#!/usr/bin/env python3
"""Regenerate the oracle case corpus (fixed seed, deterministic bytes)."""
from __future__ import annotations

import argparse
from pathlib import Path

from tryonlab import oracles

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "oracle_cases"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(DEFAULT_OUT))
    parser.add_argument("--seed", type=int, default=20240)
    parser.add_argument("--count", type=int, default=200)
    args = parser.parse_args()

    cases = {kind: oracles.generate_cases(kind, args.count, args.seed)
             for kind in oracles.ORACLE_KINDS}
    oracles.save_corpus(cases, args.out, args.seed)
    total = sum(len(v) for v in cases.values())
    print(f"wrote {total} cases ({args.count} x {len(cases)} kinds) to {args.out}")


if __name__ == "__main__":
    main()
