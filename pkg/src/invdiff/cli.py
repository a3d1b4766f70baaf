"""Command-line harness for reproducible experiments.

Subcommands: gen-data, train, eval, grid, ablate-scoring, ablate-schedule,
invert. Every command is a pure function of (config file, input files):
reruns write byte-identical outputs. Config is a JSON file deep-merged
over defaults; any key can be overridden on the command line with
``--set dotted.key=value``. The effective merged config is echoed into the
output directory as ``config.json``.

Exit codes: 0 success, 2 config/argument error, 3 file-format error,
4 numeric failure. ``INVDIFF_THREADS`` (default 1) sets the worker count
for per-sample evaluation; results are collected in sample order, so the
outputs do not depend on it.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .diffusion import CountingModel, invert, reconstruct
from .epsnet import TrainConfig, load_model, save_model, train_eps
from .errors import FormatError, NumericError
from .metrics import MetricsReport, au_roc, compute_report
from .numerics import Rng, nearest_upsample
from .schedule import linear_schedule, make_subset
from .scoring import MODES, anomaly_result, recon_score
from .synthbench import (BenchConfig, LabeledSample, make_dataset, read_ften,
                         write_ften)

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "schedule": {"T": 1000, "beta1": 1e-4, "betaT": 0.02},
    "subset": {"S": 3, "policy": "uniform"},
    "scoring": {"mode": "combined"},
    "output": {"H": 32, "W": 32},
    "bench": {},
    "train": {},
    "data": {"train": None, "test": None, "labels": None},
    "grid": {"S_values": [3, 5, 10, 50, 100, 1000],
             "ratios": [0.1, 0.2, 0.4, 0.6, 0.8]},
    "ablate_scoring": {"S_values": [3, 5, 10, 50, 100, 1000], "hist_bins": 20},
    "ablate_schedule": {"S_values": [3, 10, 100],
                        "policies": ["uniform", "quad", "cube", "exp"]},
}

# purpose tags for derived random streams
_STREAM_GRID = 71


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ValueError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot override non-object key {part!r} in {key!r}")
    node[parts[-1]] = value


def load_config(path: str | None, sets: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _deep_merge(cfg, json.load(fh))
    for assignment in sets or []:
        _apply_set(cfg, assignment)
    return cfg


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n")


def _fmt(v) -> str:
    return repr(float(v))


def _bench_from(cfg: dict) -> BenchConfig:
    known = {f.name for f in fields(BenchConfig)}
    extra = set(cfg["bench"]) - known
    if extra:
        raise ValueError(f"unknown bench config keys: {sorted(extra)}")
    kw = dict(cfg["bench"])
    if "buckets" in kw:
        kw["buckets"] = {k: tuple(v) for k, v in kw["buckets"].items()}
    kw.setdefault("seed", cfg["seed"])
    return BenchConfig(**kw)


def _train_cfg_from(cfg: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    extra = set(cfg["train"]) - known
    if extra:
        raise ValueError(f"unknown train config keys: {sorted(extra)}")
    kw = dict(cfg["train"])
    kw.setdefault("seed", cfg["seed"])
    return TrainConfig(**kw)


def _sched_from(cfg: dict):
    s = cfg["schedule"]
    return linear_schedule(int(s["T"]), float(s["beta1"]), float(s["betaT"]))


def _subset_from(cfg: dict, S=None, policy=None):
    sub = cfg["subset"]
    return make_subset(int(cfg["schedule"]["T"]),
                       int(S if S is not None else sub["S"]),
                       str(policy if policy is not None else sub["policy"]))


def _load_test_set(cfg: dict, data_dir: str | None) -> list[LabeledSample]:
    """Test samples from FTEN + labels sidecar, or the synthetic bench."""
    data = dict(cfg["data"])
    if data_dir:
        base = Path(data_dir)
        data.setdefault("test", None)
        data["test"] = data["test"] or str(base / "test.ften")
        data["labels"] = data["labels"] or str(base / "labels.csv")
    if data.get("test"):
        feats = read_ften(data["test"])
        labels_path = data.get("labels")
        samples = []
        if labels_path and os.path.exists(labels_path):
            with open(labels_path) as fh:
                rows = list(csv.DictReader(fh))
            if len(rows) != feats.shape[0]:
                raise ValueError("labels.csv row count != test.ften sample count")
            label_dir = Path(labels_path).parent
            for i, row in enumerate(rows):
                label = int(row["label"])
                mask_file = row.get("mask_file", "")
                if mask_file:
                    mask = read_ften(label_dir / mask_file)[0, 0].astype(np.int64)
                else:
                    mask = np.zeros(feats.shape[2:], dtype=np.int64)
                samples.append(LabeledSample(features=feats[i], label=label, mask=mask))
        else:
            for i in range(feats.shape[0]):
                samples.append(LabeledSample(
                    features=feats[i], label=0,
                    mask=np.zeros(feats.shape[2:], dtype=np.int64)))
        return samples
    _, test = make_dataset(_bench_from(cfg))
    return test


def _load_train_set(cfg: dict, data_dir: str | None) -> np.ndarray:
    data = dict(cfg["data"])
    if data_dir:
        data["train"] = data["train"] or str(Path(data_dir) / "train.ften")
    if data.get("train"):
        return read_ften(data["train"])
    train, _ = make_dataset(_bench_from(cfg))
    return train


def _workers() -> int:
    return max(1, int(os.environ.get("INVDIFF_THREADS", "1")))


def _map_samples(fn, samples):
    """Apply fn over samples, preserving order (optionally threaded)."""
    n = _workers()
    if n == 1:
        return [fn(i, s) for i, s in enumerate(samples)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda pair: fn(*pair), enumerate(samples)))


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: dict, out_dir: Path) -> None:
    bench = _bench_from(cfg)
    train, test = make_dataset(bench)
    _echo_config(cfg, out_dir)
    write_ften(out_dir / "train.ften", train)
    write_ften(out_dir / "test.ften", np.stack([s.features for s in test]))
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    rows = []
    for i, s in enumerate(test):
        if s.label:
            mask_file = f"masks/mask_{i:04d}.ften"
            write_ften(out_dir / mask_file, s.mask.astype(np.float64)[None, None])
        else:
            mask_file = ""
        rows.append(f"{i},{s.label},{mask_file}")
    _write_csv(out_dir / "labels.csv", "sample_index,label,mask_file", rows)
    print(f"wrote {train.shape[0]} train / {len(test)} test samples to {out_dir}")


def cmd_train(cfg: dict, out_dir: Path, data_dir: str | None) -> None:
    sched = _sched_from(cfg)
    train_cfg = _train_cfg_from(cfg)
    normals = _load_train_set(cfg, data_dir)
    _echo_config(cfg, out_dir)
    losses: list[str] = []
    model = train_eps(normals, sched, train_cfg,
                      on_epoch=lambda e, l: losses.append(f"{e},{_fmt(l)}"))
    save_model(out_dir / "model.ivad", model)
    _write_csv(out_dir / "loss.csv", "epoch,loss", losses)
    print(f"trained {model.n_params()} parameters; model at {out_dir / 'model.ivad'}")


def _eval_scores(model, samples, subset, mode, out_h, out_w):
    def one(i, s):
        counted = CountingModel(model)
        z_t = invert(counted, s.features, subset)
        res = anomaly_result(z_t, out_h, out_w, mode)
        return res, counted.nfe
    return _map_samples(one, samples)


def cmd_eval(cfg: dict, out_dir: Path, model_path: str, data_dir: str | None) -> None:
    model = load_model(model_path)
    samples = _load_test_set(cfg, data_dir)
    if samples and samples[0].features.shape != model.shape:
        raise ValueError(f"data shape {samples[0].features.shape} != model shape {model.shape}")
    mode = cfg["scoring"]["mode"]
    if mode not in MODES:
        raise ValueError(f"unknown scoring mode {mode!r}")
    subset = _subset_from(cfg)
    out_h, out_w = int(cfg["output"]["H"]), int(cfg["output"]["W"])
    _echo_config(cfg, out_dir)

    results = _eval_scores(model, samples, subset, mode, out_h, out_w)
    rows = [f"{i},{s.label},{mode},{_fmt(res.s)},{nfe}"
            for i, (s, (res, nfe)) in enumerate(zip(samples, results))]
    _write_csv(out_dir / "scores.csv", "id,label,mode,s,nfe", rows)
    write_ften(out_dir / "maps.ften",
               np.stack([res.map for res, _ in results])[:, None])

    labels = [s.label for s in samples]
    if 0 < sum(labels) < len(labels):
        maps = [res.map for res, _ in results]
        masks = [nearest_upsample(s.mask, out_h, out_w) for s in samples]
        if any(m.sum() for m in masks):
            report = compute_report([res.s for res, _ in results], labels, maps, masks)
            _write_csv(out_dir / "metrics.csv", MetricsReport.CSV_HEADER, [report.csv_row()])
            print(f"image AU-ROC {report.image_auroc:.4f}, mAD {report.mad:.4f}")
        else:
            print("labels present but no masks; skipping metrics.csv")
    else:
        print("single-class labels; skipping metrics.csv")
    print(f"scores for {len(samples)} samples at {out_dir / 'scores.csv'}")


def cmd_grid(cfg: dict, out_dir: Path, model_path: str, data_dir: str | None) -> None:
    model = load_model(model_path)
    samples = _load_test_set(cfg, data_dir)
    labels = [s.label for s in samples]
    s_values = [int(s) for s in cfg["grid"]["S_values"]]
    ratios = [float(r) for r in cfg["grid"]["ratios"]]
    out_h, out_w = int(cfg["output"]["H"]), int(cfg["output"]["W"])
    mode = cfg["scoring"]["mode"]
    T = int(cfg["schedule"]["T"])
    root = Rng(int(cfg["seed"]), _STREAM_GRID)
    _echo_config(cfg, out_dir)

    header = "setting," + ",".join(str(s) for s in s_values)
    rows = []
    for ri, r in enumerate(ratios):
        cells = []
        for S in s_values:
            if r * S < 1.0 - 1e-9:
                cells.append("n/a")
                continue
            sub = make_subset(T, S)

            def one(i, s, _sub=sub, _ri=ri, _S=S, _r=r):
                zhat = reconstruct(model, s.features, _sub, _r,
                                   root.child(_ri, _S, i))
                return recon_score(s.features, zhat, out_h, out_w).s
            scores = _map_samples(one, samples)
            cells.append(_fmt(au_roc(scores, labels)))
        rows.append(f"recon_r{int(round(r * 100))}," + ",".join(cells))

    inv_cells = []
    for S in s_values:
        sub = make_subset(T, S)
        results = _eval_scores(model, samples, sub, mode, out_h, out_w)
        inv_cells.append(_fmt(au_roc([res.s for res, _ in results], labels)))
    rows.append("inversion," + ",".join(inv_cells))
    _write_csv(out_dir / "grid.csv", header, rows)
    print(f"grid with {len(rows)} rows x {len(s_values)} step columns at {out_dir / 'grid.csv'}")


def cmd_ablate_scoring(cfg: dict, out_dir: Path, model_path: str,
                       data_dir: str | None) -> None:
    model = load_model(model_path)
    samples = _load_test_set(cfg, data_dir)
    labels = [s.label for s in samples]
    s_values = [int(s) for s in cfg["ablate_scoring"]["S_values"]]
    bins = int(cfg["ablate_scoring"]["hist_bins"])
    out_h, out_w = int(cfg["output"]["H"]), int(cfg["output"]["W"])
    T = int(cfg["schedule"]["T"])
    _echo_config(cfg, out_dir)

    table = {m: [] for m in MODES}
    score_rows = []
    hist_rows = []
    for S in s_values:
        sub = make_subset(T, S)

        def one(i, s):
            z_t = invert(model, s.features, sub)
            return {m: anomaly_result(z_t, out_h, out_w, m).s for m in MODES}
        per_sample = _map_samples(one, samples)
        for m in MODES:
            scores = [p[m] for p in per_sample]
            table[m].append(_fmt(au_roc(scores, labels)))
            for i, (s, v) in enumerate(zip(samples, scores)):
                score_rows.append(f"{m},{S},{i},{s.label},{_fmt(v)}")
            lo, hi = min(scores), max(scores)
            edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.linspace(lo, lo + 1, bins + 1)
            normal = np.histogram([v for v, s in zip(scores, samples) if s.label == 0], edges)[0]
            anom = np.histogram([v for v, s in zip(scores, samples) if s.label == 1], edges)[0]
            for b in range(bins):
                hist_rows.append(f"{m},{S},{_fmt(edges[b])},{_fmt(edges[b + 1])},"
                                 f"{int(normal[b])},{int(anom[b])}")

    header = "mode," + ",".join(str(s) for s in s_values)
    _write_csv(out_dir / "scoring_ablation.csv", header,
               [f"{m}," + ",".join(table[m]) for m in MODES])
    _write_csv(out_dir / "scores_by_mode.csv", "mode,S,id,label,s", score_rows)
    _write_csv(out_dir / "histogram.csv", "mode,S,bin_lo,bin_hi,count_normal,count_anomalous",
               hist_rows)
    print(f"scoring ablation ({len(MODES)} modes x {len(s_values)} steps) at {out_dir}")


def cmd_ablate_schedule(cfg: dict, out_dir: Path, model_path: str,
                        data_dir: str | None) -> None:
    model = load_model(model_path)
    samples = _load_test_set(cfg, data_dir)
    labels = [s.label for s in samples]
    s_values = [int(s) for s in cfg["ablate_schedule"]["S_values"]]
    policies = [str(p) for p in cfg["ablate_schedule"]["policies"]]
    mode = cfg["scoring"]["mode"]
    out_h, out_w = int(cfg["output"]["H"]), int(cfg["output"]["W"])
    T = int(cfg["schedule"]["T"])
    _echo_config(cfg, out_dir)

    rows = []
    for policy in policies:
        cells = []
        for S in s_values:
            sub = make_subset(T, S, policy)
            results = _eval_scores(model, samples, sub, mode, out_h, out_w)
            cells.append(_fmt(au_roc([res.s for res, _ in results], labels)))
        rows.append(f"{policy}," + ",".join(cells))
    header = "policy," + ",".join(str(s) for s in s_values)
    _write_csv(out_dir / "schedule_ablation.csv", header, rows)
    print(f"schedule ablation ({len(policies)} policies x {len(s_values)} steps) at {out_dir}")


def cmd_invert(cfg: dict, model_path: str, in_path: str, out_path: str) -> None:
    model = load_model(model_path)
    feats = read_ften(in_path)
    if feats.shape[1:] != model.shape:
        raise ValueError(f"data shape {feats.shape[1:]} != model shape {model.shape}")
    subset = _subset_from(cfg)
    counted = CountingModel(model)
    latents = np.stack([invert(counted, f, subset) for f in feats])
    write_ften(out_path, latents)
    print(f"inverted {feats.shape[0]} samples ({counted.nfe} evaluations) to {out_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invdiff",
        description="Anomaly detection by few-step diffusion latent inversion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, data=False, out=True):
        p.add_argument("-c", "--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if model:
            p.add_argument("--model", required=True, help="model file (.ivad)")
        if data:
            p.add_argument("--data", help="dataset directory from gen-data")

    common(sub.add_parser("gen-data", help="generate the synthetic benchmark"))
    common(sub.add_parser("train", help="train the noise predictor"), data=True)
    common(sub.add_parser("eval", help="invert and score the test set"),
           model=True, data=True)
    common(sub.add_parser("grid", help="reconstruction-vs-inversion grid"),
           model=True, data=True)
    common(sub.add_parser("ablate-scoring", help="scoring-scheme ablation"),
           model=True, data=True)
    common(sub.add_parser("ablate-schedule", help="subset-policy ablation"),
           model=True, data=True)
    p_inv = sub.add_parser("invert", help="FTEN features in, FTEN latents out")
    common(p_inv, model=True, out=False)
    p_inv.add_argument("--in", dest="in_path", required=True, help="input FTEN file")
    p_inv.add_argument("--out", dest="out_path", required=True, help="output FTEN file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "gen-data":
            cmd_gen_data(cfg, Path(args.out))
        elif args.command == "train":
            cmd_train(cfg, Path(args.out), args.data)
        elif args.command == "eval":
            cmd_eval(cfg, Path(args.out), args.model, args.data)
        elif args.command == "grid":
            cmd_grid(cfg, Path(args.out), args.model, args.data)
        elif args.command == "ablate-scoring":
            cmd_ablate_scoring(cfg, Path(args.out), args.model, args.data)
        elif args.command == "ablate-schedule":
            cmd_ablate_schedule(cfg, Path(args.out), args.model, args.data)
        elif args.command == "invert":
            cmd_invert(cfg, args.model, args.in_path, args.out_path)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
