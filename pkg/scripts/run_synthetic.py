"""Kinship benchmark: full model against the three ablations.

    python3 scripts/run_synthetic.py --out runs/kinship [--seed 0] [--epochs 20]

Prints one metrics row per variant plus the stage-3 statistics of the full run.
"""

import argparse
import logging
import os

from kgwalk.benchmark import run_kinship

VARIANTS = ("full", "no-pretrain", "freeze-pretrained", "single-agent")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/kinship")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    print("variant\tsplit\thits1\thits5\thits10\tmrr\trule_usage\tseconds")
    full = None
    for variant in args.variants:
        res = run_kinship(os.path.join(args.out, variant), ablation=variant,
                          seed=args.seed, epochs=args.epochs)
        for split, rep in res.reports.items():
            print(f"{variant}\t{split}\t{rep.hits1:.2f}\t{rep.hits5:.2f}\t{rep.hits10:.2f}"
                  f"\t{rep.mrr:.2f}\t{rep.rule_usage:.2f}\t{res.seconds:.1f}")
        if variant == "full":
            full = res
    if full is not None:
        print(f"\nrule usage on dev before training: {full.rule_usage_untrained:.2f}%")
        print(f"rule usage on dev after stage 3:   {full.rule_usage_pretrained:.2f}%")
        print(f"greedy rule-body following after stage 3: {100 * full.rule_following_pretrained:.2f}%")


if __name__ == "__main__":
    main()
