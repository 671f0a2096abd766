"""Edge overlap with the source as the structure scale goes from 0 to 1.

    python scripts/control_scale_sweep.py --models desk --values 0,0.25,0.5,0.75,1
"""

import argparse

from tridentvid.desk import DeskConfig, build_desk_models
from tridentvid.studies import structure_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--models", default="desk")
    ap.add_argument("--values", default="0,0.25,0.5,0.75,1")
    ap.add_argument("--clips", type=int, default=4)
    args = ap.parse_args()
    models = build_desk_models(args.models, DeskConfig(), verbose=True)
    values = [float(v) for v in args.values.split(",")]
    for p in structure_sweep(models, values=values, n_clips=args.clips):
        print(f"s_struct={p.value:<5g} edge_overlap={p.edge_overlap:.4f}")


if __name__ == "__main__":
    main()
