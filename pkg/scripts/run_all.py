"""Run every config in configs/ through the experiment runner and print a one-line summary."""

import argparse
import sys
import time
from pathlib import Path

from rsalab.config import ExperimentConfig
from rsalab.runner import run, verify_manifest
from rsalab.schemas import validate_outputs

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("names", nargs="*", help="config names (default: all)")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", default=str(ROOT / "results"))
    args = parser.parse_args()
    paths = sorted((ROOT / "configs").glob("*.yaml"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    for path in paths:
        cfg = ExperimentConfig.load(path)
        out = Path(args.out) / path.stem
        start = time.time()
        run(cfg, workers=args.workers, out=str(out))
        validate_outputs(out)
        ok = verify_manifest(out)
        print(f"{path.stem:14s} {time.time() - start:8.1f}s  manifest ok: {ok}  -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
