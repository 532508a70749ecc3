"""Toy-model campaign region means across seeds.

    python scripts/seed_sweep.py --formats int8 int4 --seeds 0 10
"""

import argparse

from emfisim import toy
from emfisim.campaign import CampaignSpec, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--formats", nargs="+", default=["fp32", "int8"])
    ap.add_argument("--seeds", type=int, nargs=2, default=(0, 10), metavar=("FIRST", "STOP"))
    args = ap.parse_args()

    model, ev = toy.toy_model(), toy.toy_eval_set()
    print("seed  format  baseline  mean    Front   Middle  Back    front<=back")
    for seed in range(*args.seeds):
        for kind, r in run_campaign(CampaignSpec(model, ev, seed=seed, formats=args.formats)).items():
            reg = {k: v[0] for k, v in r.regions().items()}
            print(f"{seed:4d}  {kind.value:6s}  {r.baseline_top1:.4f}    {r.mean_top1():.4f}  "
                  f"{reg['Front']:.4f}  {reg['Middle']:.4f}  {reg['Back']:.4f}  {reg['Front'] <= reg['Back']}")


if __name__ == "__main__":
    main()
