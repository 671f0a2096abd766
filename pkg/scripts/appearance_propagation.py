"""Recolored-keyframe edits against reference-free edits, one line per seed.

    python scripts/appearance_propagation.py --models desk --seeds 10
"""

import argparse
import json

from tridentvid.desk import DeskConfig, build_desk_models
from tridentvid.studies import appearance_propagation, text_alignment_ranking


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--models", default="desk")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--json", default=None, help="also dump the trials here")
    args = ap.parse_args()
    models = build_desk_models(args.models, DeskConfig(), verbose=True)
    report = appearance_propagation(models, seeds=range(args.seeds), steps=args.steps)
    print("seed clip color   err(ref) err(no ref)  shift  pass")
    for t in report.trials:
        print(f"{t.seed:4d} {t.clip_index:4d} {t.target_color:7s} {t.center_err_ref:8.4f} {t.center_err_noref:11.4f} "
              f"{t.shift_projection:6.3f}  {t.passed}")
    print(f"pass rate {report.pass_rate:.0%}")
    pairs = text_alignment_ranking(models, steps=args.steps)
    print(f"tex_ali ranking {sum(p.passed for p in pairs)}/{len(pairs)}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([t.__dict__ for t in report.trials], fh, indent=2)


if __name__ == "__main__":
    main()
