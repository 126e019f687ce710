"""Command-line entry point.

Subcommands: train, sample, complete, bench, oracle-check. Exit codes:
0 on success, 1 on runtime failure, 2 on usage or configuration errors.
Training is configured by a flat UTF-8 key=value file (# comments
allowed); command-line flags override the file, which overrides the
built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from .model import DbmShape, load_params
from .training import (ESTIMATORS, TrainConfig, default_check_model, rng_for,
                       sample, train, unbiasedness_report)
from .training import complete as complete_fn

CONFIG_KEYS = ("n_v", "n_h1", "n_h2", "learning_rate", "optimizer", "batch_size",
               "steps", "seed", "tau_max", "estimator", "truncation_policy",
               "checkpoint_every", "pcd_k", "data", "out_dir", "resume")

_INT_KEYS = {"n_v", "n_h1", "n_h2", "batch_size", "steps", "seed", "tau_max",
             "checkpoint_every", "pcd_k"}


class ConfigError(ValueError):
    pass


def parse_config_file(path) -> dict:
    """Flat key=value config; unknown keys are rejected."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = val
    return values


def build_train_config(file_values: dict, overrides: dict) -> TrainConfig:
    vals = dict(file_values)
    vals.update({k: v for k, v in overrides.items() if v is not None})
    try:
        n_v = int(vals["n_v"])
    except KeyError:
        raise ConfigError("n_v is required") from None
    n_h1 = int(vals.get("n_h1", n_v))   # hidden layers default to the visible size
    n_h2 = int(vals.get("n_h2", n_h1))
    kwargs = {}
    for key in CONFIG_KEYS[3:]:
        if key not in vals:
            continue
        raw = vals[key]
        if key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key == "learning_rate":
            kwargs[key] = float(raw)
        else:
            kwargs[key] = str(raw)
    try:
        cfg = TrainConfig(shape=DbmShape(n_v, n_h1, n_h2), **kwargs).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_training_data(spec: str, cfg: TrainConfig) -> np.ndarray:
    """Training rows from a path or a synthetic:<n>x<len> spec."""
    if not spec:
        raise ConfigError("no data source configured (key 'data')")
    if spec.startswith("synthetic:"):
        try:
            n, _, length = spec[len("synthetic:"):].partition("x")
            ds = data_mod.synthetic_patterns(int(n), int(length), cfg.seed)
        except ValueError as exc:
            raise ConfigError(f"bad synthetic spec {spec!r}: {exc}") from None
        return ds.spins()
    if not os.path.exists(spec):
        raise ConfigError(f"data file not found: {spec}")
    if spec.endswith(".npy"):
        return data_mod.load_spin_rows(spec)
    images, _ = data_mod.load_idx_images(spec)
    return data_mod.to_spin_dataset(images, source=spec).spins()


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config)
    overrides = {"steps": args.steps, "seed": args.seed, "data": args.data,
                 "out_dir": args.out_dir}
    cfg = build_train_config(file_values, overrides)
    rows = load_training_data(cfg.data, cfg)
    if rows.shape[1] != cfg.shape.n_v:
        raise ConfigError(f"data width {rows.shape[1]} != n_v {cfg.shape.n_v}")
    out_dir = cfg.out_dir or "."
    params, history = train(cfg, rows, out_dir=out_dir)
    print(f"trained {cfg.steps} steps; final checkpoint in {out_dir}")
    if history:
        last = history[-1]
        print(f"last step: tau_pos={last.mean_tau_pos:.2f} tau_neg={last.mean_tau_neg:.2f} "
              f"grad_norm={last.grad_norm:.4g}")
    return 0


def cmd_sample(args) -> int:
    params = load_params(args.checkpoint)
    rng = rng_for(args.seed, 10)
    draws = sample(params, args.n, args.mh_steps, rng)
    os.makedirs(args.out, exist_ok=True)
    arr = (np.stack(draws).astype(np.int8) if draws
           else np.zeros((0, params.shape.n_v), dtype=np.int8))
    np.save(os.path.join(args.out, "samples.npy"), arr)
    if args.height and args.width:
        if args.height * args.width * 8 != params.shape.n_v:
            raise ConfigError("height*width*8 does not match the model's visible size")
        for i, v in enumerate(draws):
            img = data_mod.spins_to_images(v, args.height, args.width)[0]
            data_mod.write_pgm(img, os.path.join(args.out, f"sample-{i:03d}.pgm"))
    print(f"wrote {len(draws)} samples to {args.out}")
    return 0


def _parse_mask_spec(spec: str, height: int, width: int) -> data_mod.Mask:
    if spec == "lower-half":
        return data_mod.lower_half_mask(height, width)
    if spec.startswith("rect:"):
        try:
            r0, r1, c0, c1 = map(int, spec[len("rect:"):].split(":"))
        except ValueError:
            raise ConfigError(f"bad rect mask spec {spec!r}; want rect:r0:r1:c0:c1") from None
        return data_mod.rectangle_mask(height, width, r0, r1, c0, c1)
    raise ConfigError(f"unknown mask spec {spec!r}")


def cmd_complete(args) -> int:
    params = load_params(args.checkpoint)
    rng = rng_for(args.seed, 11)
    os.makedirs(args.out, exist_ok=True)
    n_v = params.shape.n_v

    if args.input.endswith(".npy"):
        loaded = np.load(args.input)
        if loaded.dtype != np.uint8:
            # raw spin rows with an explicit mask file
            rows = data_mod.load_spin_rows(args.input)
            if args.mask_file is None:
                raise ConfigError("spin-row input needs --mask-file")
            observed = np.load(args.mask_file).astype(bool)
            if rows.shape[1] != n_v or observed.shape != (n_v,):
                raise ConfigError("input/mask width does not match the model")
            done = np.stack([complete_fn(params, row, observed, rng) for row in rows])
            np.save(os.path.join(args.out, "completed.npy"), done.astype(np.int8))
            print(f"completed {len(done)} rows to {args.out}")
            return 0
        images = loaded if loaded.ndim == 3 else loaded[None]
    else:
        images, _ = data_mod.load_idx_images(args.input)
    h, w = images.shape[1:]
    if h * w * 8 != n_v:
        raise ConfigError(f"images are {h}x{w} but the model expects n_v={n_v}")
    mask = _parse_mask_spec(args.mask, h, w)
    ds = data_mod.to_spin_dataset(images)
    completed = []
    for row in ds.spins():
        full = complete_fn(params, row, mask.observed, rng)
        completed.append(data_mod.spins_to_images(full, h, w)[0])
    for i, img in enumerate(completed):
        data_mod.write_pgm(img, os.path.join(args.out, f"completed-{i:03d}.pgm"))
    np.save(os.path.join(args.out, "completed.npy"), np.stack(completed))
    print(f"completed {len(completed)} images to {args.out}")
    return 0


def cmd_bench(args) -> int:
    dims = [int(d) for d in args.dims.split(",") if d]
    if args.arms == "all":
        arms = bench_mod.ALL_ARMS
    else:
        arms = tuple(bench_mod.BenchArm.parse(a) for a in args.arms.split(","))
    records = bench_mod.run_coupling_sweep(
        dims, args.replicates, arms, seed=args.seed,
        tau_max_mh=args.tau_max_mh, tau_max_gibbs=args.tau_max_gibbs,
        threads=args.threads)
    bench_mod.emit_csv(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    if args.summary:
        print(bench_mod.format_summary(bench_mod.summarize(records)))
    return 0


def cmd_oracle_check(args) -> int:
    if args.samples < args.min_samples:
        print(f"refusing to run: {args.samples} samples gives too little power "
              f"(minimum {args.min_samples}); raise --samples or lower --min-samples")
        return 2
    params, v = default_check_model(args.model_seed)
    failed = False
    for estimator in ESTIMATORS:
        rep = unbiasedness_report(params, v, args.samples, args.seed,
                                  estimator=estimator, tau_max=args.tau_max)
        verdict = "PASS" if rep["passed"] else "FAIL"
        print(f"{estimator:>13}: n={args.samples} max|z|={rep['max_abs_z']:.3f} "
              f"(threshold 4.0) {verdict}")
        z_text = np.array2string(rep["z"], precision=2, max_line_width=78,
                                 suppress_small=True)
        print("    per-component z: " + z_text.replace("\n", "\n    "))
        worst = np.argsort(-np.abs(rep["z"]))[:3]
        for j in worst:
            print(f"    component {j:3d}: mean={rep['mean'][j]:+.5f} "
                  f"exact={rep['exact'][j]:+.5f} z={rep['z'][j]:+.2f}")
        failed = failed or not rep["passed"]
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spindbm",
                                description="Spin Boltzmann machines with coupled-chain training")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--data", default=None)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--mh-steps", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--height", type=int, default=0)
    s.add_argument("--width", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("complete", help="fill in masked inputs with a checkpoint")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--input", required=True,
                   help="IDX file, .npy uint8 images, or .npy +-1 spin rows")
    c.add_argument("--mask", default="lower-half",
                   help="'lower-half' or 'rect:r0:r1:c0:c1' (pixel rows/cols masked out)")
    c.add_argument("--mask-file", default=None,
                   help=".npy boolean observed-mask for spin-row inputs")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_complete)

    b = sub.add_parser("bench", help="coupling-time sweep over dimensionality")
    b.add_argument("--dims", default=",".join(map(str, bench_mod.DEFAULT_DIMS)))
    b.add_argument("--replicates", type=int, default=bench_mod.DEFAULT_REPLICATES)
    b.add_argument("--arms", default="all",
                   help="'all' or comma list like mh+local_mode,gibbs+uniform")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--tau-max-mh", type=int, default=bench_mod.DEFAULT_TAU_MAX_MH)
    b.add_argument("--tau-max-gibbs", type=int, default=bench_mod.DEFAULT_TAU_MAX_GIBBS)
    b.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    b.add_argument("--summary", action="store_true")
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("oracle-check",
                       help="z-test the gradient estimators against exact enumeration")
    o.add_argument("--samples", type=int, default=20_000)
    o.add_argument("--min-samples", type=int, default=1_000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--model-seed", type=int, default=7)
    o.add_argument("--tau-max", type=int, default=10_000)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
