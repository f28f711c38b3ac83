"""Fine-tune a pre-trained backbone and a random one on identical budgets.

    python scripts/finetune_compare.py --manifest data/manifest.jsonl \
        --checkpoint runs/desk/full/pretrain.pt --out runs/ft
"""

import argparse
import json
import logging
from pathlib import Path

from taco import pipeline
from taco.config import parse_literal
from taco.datagen import DatasetManifest
from taco.experiments import DESK_OVERRIDES, desk_config


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--checkpoint", required=True, help="pretrain.pt of the backbone to fine-tune")
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    overrides = dict(DESK_OVERRIDES)
    for item in args.set:
        k, _, v = item.partition("=")
        overrides[k] = parse_literal(v)
    cfg = desk_config(args.seed, overrides)
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out)

    reports = {}
    for name, ckpt, rand in (("pretrained", args.checkpoint, False), ("scratch", None, True)):
        res = pipeline.finetune(cfg, manifest, ckpt, out / name, random_init=rand)
        reports[name] = res.report.to_dict()

    attrs = [a for a in reports["pretrained"] if isinstance(reports["pretrained"][a], dict)]
    print(f"{'attribute':<12}{'pretrained F1':>15}{'scratch F1':>12}")
    for a in attrs:
        print(f"{a:<12}{reports['pretrained'][a]['f1']:>15.2f}{reports['scratch'][a]['f1']:>12.2f}")
    print(f"{'avg acc':<12}{reports['pretrained']['average_accuracy']:>15.2f}"
          f"{reports['scratch']['average_accuracy']:>12.2f}")
    (out / "comparison.json").write_text(json.dumps(reports, indent=2))


if __name__ == "__main__":
    main()
