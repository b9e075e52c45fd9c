"""Fixed-delay external matcher for latency-track calibration.

Reads the pair file passed as its last argument, sleeps a configurable
time once per invocation, and prints one constant similarity per pair.

    python -m facecurate.dummy_matcher --sleep-ms 200 pairs.tsv
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sleep-ms", type=float, default=0.0)
    parser.add_argument("--score", type=float, default=0.5)
    parser.add_argument("pair_file")
    args = parser.parse_args(argv)
    n_pairs = sum(
        1
        for line in Path(args.pair_file).read_text(encoding="utf-8").splitlines()
        if line.strip()
    )
    if args.sleep_ms > 0.0:
        time.sleep(args.sleep_ms / 1000.0)
    sys.stdout.write("".join(f"{args.score}\n" for _ in range(n_pairs)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
