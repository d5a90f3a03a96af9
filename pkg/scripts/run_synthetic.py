#!/usr/bin/env python3
"""Desk-scale synthetic experiment suite.

Trains the small encoder on Gaussian-blob data in the four settings
(supervised / unsupervised, plain / hardened negatives), logs collapse
metrics per epoch, and prints the final losses next to their closed-form
floors. Optionally continues training from the hardened supervised
checkpoint under every other setting (the near-collapse initialization
protocol).

    python scripts/run_synthetic.py --out results/
    python scripts/run_synthetic.py --dim 3072 --k 256 --epochs 400 --near-nc
"""

import argparse
import dataclasses
import json
from pathlib import Path

from nclab.sampling import HardeningSpec, gen_synthetic
from nclab.train import TrainConfig, train


def run_setting(name, config, data, out_dir):
    result = train(
        config,
        data,
        checkpoint_path=out_dir / f"{name}.npz",
        metrics_path=out_dir / f"{name}.csv",
    )
    final = result.metrics[-1]
    row = {
        "setting": name,
        "final_loss": round(final.loss, 6),
        "bound": round(result.bound, 6),
        "gap": round(final.loss - result.bound, 6),
        "zero_sum": round(final.zero_sum, 6),
        "unit_norm": round(final.unit_norm, 6),
        "equal_inner_product": round(final.equal_inner_product, 6),
        "dc": [round(float(v), 4) for v in final.dc],
    }
    print(json.dumps(row))
    return row, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--classes", type=int, default=3)
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=400)
    parser.add_argument("--k", type=int, default=256)
    parser.add_argument("--batch-size", type=int, default=512)
    parser.add_argument("--betas", default="10,30", help="hardening levels for the hard runs")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="results")
    parser.add_argument("--near-nc", action="store_true",
                        help="rerun every setting from the first hardened checkpoint")
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = gen_synthetic(args.classes, args.per_class, args.dim, seed=7)
    data.save_csv(out_dir / "dataset.csv")

    base = dict(epochs=args.epochs, batch_size=args.batch_size, k=args.k, seed=args.seed)
    betas = [float(b) for b in args.betas.split(",") if b]
    settings = {"scl": TrainConfig(**base), "ucl": TrainConfig(**base, negative_mode="unsupervised_all")}
    for beta in betas:
        tilt = HardeningSpec("exponential", beta=beta)
        settings[f"hscl_b{beta:g}"] = TrainConfig(**base, hardening=tilt)
        settings[f"hucl_b{beta:g}"] = TrainConfig(
            **base, hardening=tilt, negative_mode="unsupervised_all"
        )

    rows = []
    for name, config in settings.items():
        row, _ = run_setting(name, config, data, out_dir)
        rows.append(row)

    if args.near_nc:
        anchor = f"hscl_b{betas[0]:g}"
        print(f"# continuing every setting from the {anchor} checkpoint")
        for name, config in settings.items():
            resumed = dataclasses.replace(config, init_from=str(out_dir / f"{anchor}.npz"))
            row, _ = run_setting(f"nearnc_{name}", resumed, data, out_dir)
            rows.append(row)

    (out_dir / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(f"# wrote {out_dir}/summary.json")


if __name__ == "__main__":
    main()
