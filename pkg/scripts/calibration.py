"""Calibration numbers for the default EMFI mask across seeds.

For each seed: corrupted fractions before/after the boundary, BER and
0xFE/0xFF fraction on uniformly random content, and the FP32/FP16
NaN fractions on truncated-normal weights.

    python scripts/calibration.py --seeds 0 10
"""

import argparse

import numpy as np

from emfisim.analytics import bit_error_rate, feff_fraction, fp_corruption_stats
from emfisim.faults import MiB, EmfiPatternParams, apply_mask, gen_emfi_pattern
from emfisim.store import build_store
from emfisim.synth import truncated_normal, uniform_bytes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs=2, default=(0, 10), metavar=("FIRST", "STOP"))
    ap.add_argument("--ff-prob", type=float, default=EmfiPatternParams.ff_prob)
    args = ap.parse_args()

    w = truncated_normal(1 << 20, 0.3, 1.0, 21)
    stores = {"fp32": build_store([("w", w)], "fp32"),
              "fp16": build_store([("w", np.concatenate([w, w]))], "fp16")}
    rand = uniform_bytes(4 * MiB, 21)
    print("seed  active  post    ber     feff    nan32   nan16")
    for seed in range(*args.seeds):
        mask = gen_emfi_pattern(EmfiPatternParams(seed=seed, ff_prob=args.ff_prob))
        hit = apply_mask(rand, mask)
        nan = {k: fp_corruption_stats(s, s.with_blob(apply_mask(s.blob, mask))).nan_fraction
               for k, s in stores.items()}
        print(f"{seed:4d}  {mask.corrupted_fraction(0, 2 * MiB):.4f}  "
              f"{mask.corrupted_fraction(2 * MiB, 4 * MiB):.4f}  {bit_error_rate(rand, hit):.4f}  "
              f"{feff_fraction(hit):.4f}  {nan['fp32']:.4f}  {nan['fp16']:.4f}")


if __name__ == "__main__":
    main()
