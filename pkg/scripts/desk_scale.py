"""Pre-train several backbones on one synthetic set and compare linear-probe results.

    python scripts/desk_scale.py --work runs/desk
    python scripts/desk_scale.py --work runs/lam --sweep loss.lam=0,1,2,4
    python scripts/desk_scale.py --work runs/aug --ablate-augment
"""

import argparse
import json
import logging

from taco.config import parse_literal
from taco.experiments import DESK_OVERRIDES, RANDOM_INIT, STANDARD_VARIANTS, compare


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", required=True, help="working directory (results are cached here)")
    ap.add_argument("--count", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override applied to every variant, on top of the desk defaults")
    ap.add_argument("--sweep", metavar="KEY=V1,V2,...", help="one pre-trained variant per value")
    ap.add_argument("--ablate-augment", action="store_true",
                    help="drop each augmentation in turn")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    base = dict(DESK_OVERRIDES)
    for item in args.set:
        k, _, v = item.partition("=")
        base[k] = parse_literal(v)
    if args.sweep:
        key, _, values = args.sweep.partition("=")
        variants = {f"{key}={v}": {key: parse_literal(v)} for v in values.split(",")}
        variants[RANDOM_INIT] = None
    elif args.ablate_augment:
        variants = {"full": {}, RANDOM_INIT: None}
        for aug in ("crop", "jitter", "reorder"):
            variants[f"no_{aug}"] = {f"augment.use_{aug}": False}
    else:
        variants = STANDARD_VARIANTS

    results = compare(args.work, variants, base, args.count, args.seed)
    print(f"{'variant':<24}{'font F1':>10}{'avg acc':>10}{'pretrain s':>12}")
    for name, r in results.items():
        print(f"{name:<24}{r.font_f1:>10.2f}{r.average_accuracy:>10.2f}{r.pretrain_seconds:>12.0f}")
    print(json.dumps({n: r.font_f1 for n, r in results.items()}))


if __name__ == "__main__":
    main()
