"""Command-line front end: data generation, training, bound tables, checks.

Exit codes: 0 on success, 1 when a verification verdict fails or something
breaks internally, 2 for usage errors (bad flags, malformed config files).
Every command is deterministic given its flags and seeds, and re-running
overwrites its outputs byte-identically.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, verify
from .geometry import NormalizationMode
from .losses import LossSpec
from .sampling import HardeningSpec, LabeledDataset, PositiveStrategy, gen_synthetic
from .train import TrainConfig, train, write_metrics_csv
from .util import ConfigurationError

USAGE_ERROR = 2
FAILURE = 1

LOSS_ALIASES = {
    "infonce": "infonce_mean",
    "infonce_mean": "infonce_mean",
    "infonce_sum": "infonce_sum",
    "triplet": "triplet",
}

# Log-scale spectrum plots clamp exact zeros to this floor.
DC_PLOT_FLOOR = 1e-12


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _loss_spec(name: str, alpha: float) -> LossSpec:
    if name not in LOSS_ALIASES:
        raise UsageError(f"unknown loss {name!r}; choose from {sorted(LOSS_ALIASES)}")
    return LossSpec(LOSS_ALIASES[name], alpha)


def cmd_gen_data(args) -> int:
    if args.classes < 2 or args.per_class < 1 or args.dim < 1:
        raise UsageError("need --classes >= 2, --per-class >= 1, --dim >= 1")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data = gen_synthetic(args.classes, args.per_class, args.dim, args.seed)
    data.save_csv(out)
    print(f"{out} sha256={_sha256(out)}")
    return 0


TRAIN_REQUIRED_KEYS = {
    "dataset", "epochs", "batch_size", "k", "loss", "hardening",
    "normalization", "positives", "negative_mode", "seed", "out_dir",
}
TRAIN_OPTIONAL_KEYS = {"hidden_widths", "d_z", "lr", "init_from", "metric_every"}


def load_run_config(path: Path) -> dict:
    """Parse and validate a training run JSON; unknown keys are rejected."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(raw) - TRAIN_REQUIRED_KEYS - TRAIN_OPTIONAL_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    missing = TRAIN_REQUIRED_KEYS - set(raw)
    if missing:
        raise UsageError(f"missing config keys: {sorted(missing)}")
    return raw


def _build_train_config(raw: dict, init_from_override=None) -> TrainConfig:
    loss_raw = dict(raw["loss"])
    hard_raw = dict(raw["hardening"])
    pos_raw = dict(raw["positives"])
    try:
        spec = _loss_spec(loss_raw.pop("variant"), float(loss_raw.pop("alpha", 1.0)))
        if loss_raw:
            raise UsageError(f"unknown loss keys: {sorted(loss_raw)}")
        hardening = HardeningSpec(
            hard_raw.pop("variant"),
            float(hard_raw.pop("beta", 0.0)),
            float(hard_raw.pop("epsilon", 1.0)),
        )
        if hard_raw:
            raise UsageError(f"unknown hardening keys: {sorted(hard_raw)}")
        positives = PositiveStrategy(pos_raw.pop("kind"), float(pos_raw.pop("variance", 0.01)))
        if pos_raw:
            raise UsageError(f"unknown positives keys: {sorted(pos_raw)}")
        init_from = init_from_override or raw.get("init_from")
        return TrainConfig(
            epochs=int(raw["epochs"]),
            batch_size=int(raw["batch_size"]),
            k=int(raw["k"]),
            loss=spec,
            hardening=hardening,
            normalization=NormalizationMode(raw["normalization"]),
            positives=positives,
            negative_mode=str(raw["negative_mode"]),
            seed=int(raw["seed"]),
            hidden_widths=tuple(raw.get("hidden_widths", (256, 128))),
            d_z=raw.get("d_z"),
            lr=float(raw.get("lr", 1e-3)),
            init_from=str(init_from) if init_from else None,
        )
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"invalid training config: {err}") from err


def cmd_train(args) -> int:
    raw = load_run_config(Path(args.config))
    config = _build_train_config(raw, init_from_override=args.init_from)
    metric_every = int(raw.get("metric_every", 1))
    if metric_every < 1:
        raise UsageError("metric_every must be at least 1")
    dataset_path = Path(raw["dataset"])
    if not dataset_path.is_absolute():
        dataset_path = Path(args.config).parent / dataset_path
    if not dataset_path.exists():
        raise UsageError(f"dataset file not found: {dataset_path}")
    data = LabeledDataset.load_csv(dataset_path)
    out_dir = Path(raw["out_dir"])
    if not out_dir.is_absolute():
        out_dir = Path(args.config).parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(config, data, checkpoint_path=out_dir / "checkpoint.npz")
    kept = [r for r in result.metrics if r.epoch % metric_every == 0 or r.epoch == config.epochs]
    write_metrics_csv(kept or result.metrics, out_dir / "metrics.csv")
    final = result.metrics[-1]
    summary = {
        "final_loss": final.loss,
        "final_epoch": final.epoch,
        "zero_sum": final.zero_sum,
        "unit_norm": final.unit_norm,
        "equal_inner_product": final.equal_inner_product,
        "dc_spectrum": [float(v) for v in final.dc],
        "bound": result.bound,
        "gap": final.loss - result.bound,
        "config_hash": config.digest(),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.plot:
        _plot_run(result, out_dir)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _plot_run(result, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = result.metrics
    epochs = [r.epoch for r in rows]
    fig, (ax_loss, ax_nc, ax_dc) = plt.subplots(1, 3, figsize=(13, 3.6))
    ax_loss.plot(epochs, [r.loss for r in rows], label="loss")
    ax_loss.axhline(result.bound, ls="--", c="k", label="bound")
    ax_loss.set_xlabel("epoch")
    ax_loss.legend()
    for name in ("zero_sum", "unit_norm", "equal_inner_product"):
        ax_nc.plot(epochs, [getattr(r, name) for r in rows], label=name)
    ax_nc.set_xlabel("epoch")
    ax_nc.set_yscale("log")
    ax_nc.legend(fontsize=7)
    spectrum = np.maximum(rows[-1].dc, DC_PLOT_FLOOR)
    ax_dc.semilogy(np.arange(1, spectrum.size + 1), spectrum, "o-")
    ax_dc.set_xlabel("singular value index")
    ax_dc.set_ylim(bottom=DC_PLOT_FLOOR / 2)
    fig.tight_layout()
    fig.savefig(out_dir / "run.svg")
    plt.close(fig)


def cmd_bounds(args) -> int:
    if args.c_min < 2 or args.c_max < args.c_min:
        raise UsageError("need 2 <= --c-min <= --c-max")
    if args.k_max < 1:
        raise UsageError("need --k-max >= 1")
    spec = _loss_spec(args.loss, args.alpha)
    rows = bounds.lb_sweep(range(args.c_min, args.c_max + 1), range(1, args.k_max + 1), spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bounds.sweep_to_csv(rows, out)
    print(f"{out} rows={len(rows)}")
    if args.plot:
        _plot_sweep(rows, Path(args.plot))
        print(args.plot)
    return 0


def _plot_sweep(rows, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks = sorted({r.k for r in rows})
    fig, (ax_u, ax_s) = plt.subplots(1, 2, figsize=(9, 3.6))
    for k in ks:
        sub = [r for r in rows if r.k == k]
        cs = [r.n_classes for r in sub]
        ax_u.plot(cs, [r.ucl_bound for r in sub], marker=".", label=f"k={k}")
        ax_s.plot(cs, [r.scl_bound for r in sub], marker=".", label=f"k={k}")
    for ax, title in ((ax_u, "unsupervised bound"), (ax_s, "supervised bound")):
        ax.set_xlabel("number of classes")
        ax.set_title(title)
        ax.legend(fontsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def _emit(record: dict, stream_path) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line)
    if stream_path:
        with open(stream_path, "a") as fh:
            fh.write(line + "\n")


def _verdict_record(check: str, params: dict, report) -> dict:
    return {
        "check": check,
        "params": params,
        **report.summary(),
        "verdict": "pass" if report.passed else "fail",
    }


def _monotone_table(rng, size: int = 5):
    values = np.sort(rng.uniform(-1.0, 1.0, size=size))
    heights = np.sort(rng.uniform(0.0, 2.0, size=size))
    return values, heights


def _harris_fixtures(n_pairs: int, k: int, seed: int, negative_control: bool):
    """Random monotone (weight, payoff) pairs on small supports; the negative
    control flips the payoff to be decreasing in the first coordinate."""
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        support = np.sort(rng.uniform(-1.0, 1.0, size=5))
        probs = rng.dirichlet(np.ones(5))
        w_vals, w_heights = _monotone_table(rng)
        g_vals, g_heights = _monotone_table(rng)

        def weight_fn(u, v=w_vals, h=w_heights):
            return np.prod(np.interp(u, v, h), axis=1)

        if negative_control:
            def payoff_fn(u):
                return -u[:, 0]
        else:
            def payoff_fn(u, v=g_vals, h=g_heights):
                return np.interp(u, v, h).sum(axis=1)

        yield support, probs, weight_fn, payoff_fn


def cmd_verify(args) -> int:
    stream = Path(args.out) if args.out else None
    if stream:
        stream.parent.mkdir(parents=True, exist_ok=True)
        stream.write_text("")
    spec = _loss_spec(args.loss, args.alpha)
    all_pass = True
    if args.check == "nc-optimality":
        for setting in ("SCL", "UCL"):
            report = verify.check_nc_optimality(args.classes, args.k, spec, setting)
            params = {"classes": args.classes, "k": args.k, "setting": setting,
                      "loss": spec.variant, "alpha": spec.alpha}
            _emit(_verdict_record("nc-optimality", params, report), stream)
            all_pass &= report.passed
    elif args.check == "batched":
        sizes = [int(s) for s in args.batches.split(",") if s]
        report = verify.check_batched_equality(args.classes, args.per_class, sizes, args.k, spec)
        params = {"classes": args.classes, "per_class": args.per_class,
                  "batches": sizes, "k": args.k, "loss": spec.variant}
        _emit(_verdict_record("batched", params, report), stream)
        all_pass &= report.passed
    elif args.check == "theorem1":
        rng = np.random.default_rng(args.seed)
        table = rng.standard_normal((args.points, args.dim))
        table /= np.maximum(1.0, np.linalg.norm(table, axis=1))[:, None]
        labels = (np.arange(args.points) % args.classes) + 1
        hardening = HardeningSpec("exponential", beta=args.beta)
        for setting in ("SCL_vs_HSCL", "UCL_vs_HUCL"):
            report = verify.check_theorem1(
                table, labels, setting, hardening, spec, args.k,
                n_mc=args.n_mc, seed=args.seed,
            )
            params = {"setting": setting, "beta": args.beta, "k": args.k,
                      "classes": args.classes, "points": args.points,
                      "n_mc": args.n_mc, "seed": args.seed}
            _emit(_verdict_record("theorem1", params, report), stream)
            all_pass &= report.passed
    elif args.check == "harris":
        if args.k > 8:
            raise UsageError("harris enumerates 5**k tuples; pass --k 8 or less")
        fixtures = _harris_fixtures(args.pairs, args.k, args.seed, args.negative_control)
        for index, (support, probs, weight_fn, payoff_fn) in enumerate(fixtures):
            report = verify.check_harris(weight_fn, payoff_fn, support, probs, args.k)
            params = {"fixture": index, "k": args.k, "seed": args.seed,
                      "negative_control": args.negative_control}
            _emit(_verdict_record("harris", params, report), stream)
            all_pass &= report.passed
    else:
        raise UsageError(f"unknown check {args.check!r}")
    return 0 if all_pass else FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic labeled dataset CSV")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run a training config (JSON)")
    p.add_argument("config")
    p.add_argument("--init-from", default=None, help="checkpoint to start the encoder from")
    p.add_argument("--plot", action="store_true", help="also write run.svg")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bounds", help="write the lower-bound sweep table")
    p.add_argument("--c-min", type=int, default=2)
    p.add_argument("--c-max", type=int, default=20)
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--loss", default="infonce")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="optional SVG path")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="run a verification check, one JSON verdict per line")
    p.add_argument("--check", required=True,
                   choices=["theorem1", "harris", "nc-optimality", "batched"])
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--n-mc", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", default="infonce")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--batches", default="137,93,70")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--negative-control", action="store_true")
    p.add_argument("--out", default=None, help="also append verdicts to this file")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (ConfigurationError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
