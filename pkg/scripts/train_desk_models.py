"""Train (or reuse) the full desk-scale model chain in one directory.

    python scripts/train_desk_models.py --out desk

Stages already on disk with a matching config digest are skipped.
"""

import argparse
import time

from tridentvid.desk import DeskConfig, build_desk_models


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="desk")
    ap.add_argument("--seed", type=int, default=0, help="offset added to every stage seed")
    args = ap.parse_args()
    cfg = DeskConfig()
    cfg.reseed(args.seed)
    start = time.perf_counter()
    models = build_desk_models(args.out, cfg, verbose=True)
    print(f"desk models in {models.workdir} ({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
