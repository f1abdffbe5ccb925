"""Command-line front end.

Subcommands: train, compare, verify-theory, inject-noise, make-synth.
Option precedence: command-line flags override config-file keys override
built-in defaults. The config file is plain ``key: value`` text using the
same names as the long flags (underscores for dashes), e.g.::

    dataset: fashion-mnist
    scenario: SD
    alpha2: 0.5
    epochs: 15
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, theory
from .datasets import inject_colony_noise, save_npz, synth_blobs
from .harness import ExperimentConfig, compare_scenarios, parse_run_record, run_experiment
from .losses import CompositeLossConfig
from .network import SolverConfig
from .sampler import SeededRng
from .taxonomy import format_prior

_TRAIN_DEFAULTS = {
    "dataset": "blobs",
    "data_dir": None,
    "scenario": "SD",
    "taxonomy": None,
    "alpha1": 1.0,
    "alpha2": 0.5,
    "prob_clamp": 1e-7,
    "solver": "adam",
    "lr": None,  # adam 1e-3, sgd 0.05 when unset
    "momentum": 0.9,
    "epochs": 10,
    "batch_size": 128,
    "seed": 0,
    "reps": 3,
    "noise_ratio": 0.0,
    "out": None,
    "hidden": "256,256,256",
    "loss_reduction": "mean",
    "blob_classes": 4,
    "blob_colony_sizes": "2,2",
    "blob_per_class": 200,
    "blob_test_per_class": 100,
    "blob_dim": 16,
    "blob_separation": 8.0,
}


def _parse_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SystemExit(f"{path}:{lineno}: expected 'key: value', got {raw!r}")
        key, _, value = line.partition(":")
        key = key.strip().replace("-", "_")
        if key not in _TRAIN_DEFAULTS:
            raise SystemExit(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _coerce(key: str, value):
    """Config-file strings -> the type of the built-in default."""
    if not isinstance(value, str):
        return value
    default = _TRAIN_DEFAULTS[key]
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _effective(args, keys) -> dict:
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key in keys:
        cli = getattr(args, key, None)
        if cli is not None:
            merged[key] = cli
        elif key in file_values:
            merged[key] = _coerce(key, file_values[key])
        else:
            merged[key] = _TRAIN_DEFAULTS[key]
    return merged


def _int_tuple(text) -> tuple[int, ...]:
    if isinstance(text, tuple):
        return text
    return tuple(int(tok) for tok in str(text).split(",") if tok.strip())


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key: value config file (flags override it)")
    p.add_argument("--dataset", help="fashion-mnist | cifar10 | cifar100 | blobs | synth dir")
    p.add_argument("--data-dir", dest="data_dir", help="directory holding the dataset binaries")
    p.add_argument("--scenario", choices=("OT", "RT", "SD"))
    p.add_argument("--taxonomy", help="builtin taxonomy key or a taxonomy file path")
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--prob-clamp", dest="prob_clamp", type=float)
    p.add_argument("--solver", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--noise-ratio", dest="noise_ratio", type=float)
    p.add_argument("--out", help="output directory for run CSVs")
    p.add_argument("--hidden", help="comma-separated hidden layer widths")
    p.add_argument("--loss-reduction", dest="loss_reduction", choices=("mean", "sum"))
    p.add_argument("--blob-classes", dest="blob_classes", type=int)
    p.add_argument("--blob-colony-sizes", dest="blob_colony_sizes")
    p.add_argument("--blob-per-class", dest="blob_per_class", type=int)
    p.add_argument("--blob-test-per-class", dest="blob_test_per_class", type=int)
    p.add_argument("--blob-dim", dest="blob_dim", type=int)
    p.add_argument("--blob-separation", dest="blob_separation", type=float)


def experiment_config_from_args(args) -> ExperimentConfig:
    opts = _effective(args, _TRAIN_DEFAULTS)
    lr = opts["lr"]
    if lr is None:
        lr = 1e-3 if opts["solver"] == "adam" else 0.05
    solver = SolverConfig(
        kind=opts["solver"],
        learning_rate=lr,
        momentum=opts["momentum"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
    )
    return ExperimentConfig(
        dataset=opts["dataset"],
        data_dir=opts["data_dir"],
        scenario=opts["scenario"],
        taxonomy=opts["taxonomy"],
        alpha1=opts["alpha1"],
        alpha2=opts["alpha2"],
        prob_clamp=opts["prob_clamp"],
        solver=solver,
        seed=opts["seed"],
        noise_ratio=opts["noise_ratio"],
        repetitions=opts["reps"],
        out_dir=opts["out"],
        hidden_sizes=_int_tuple(opts["hidden"]),
        loss_reduction=opts["loss_reduction"],
        blob_classes=opts["blob_classes"],
        blob_colony_sizes=_int_tuple(opts["blob_colony_sizes"]),
        blob_per_class=opts["blob_per_class"],
        blob_test_per_class=opts["blob_test_per_class"],
        blob_dim=opts["blob_dim"],
        blob_separation=opts["blob_separation"],
    )


def _cmd_train(args) -> int:
    cfg = experiment_config_from_args(args)
    records = run_experiment(cfg)
    for rec in records:
        print(
            f"{cfg.dataset} {cfg.scenario} rep={rec.config['rep']} "
            f"seed={rec.seed} final_test_accuracy={rec.final_accuracy:.4f} "
            f"wall_time={rec.wall_time_s:.1f}s sampler_draws={rec.sampler_draws}"
        )
    if cfg.out_dir:
        print(f"records written to {cfg.out_dir}")
    return 0


def _cmd_compare(args) -> int:
    paths: list[Path] = []
    if args.runs_dir:
        paths.extend(sorted(Path(args.runs_dir).glob("*.csv")))
    paths.extend(Path(p) for p in args.records)
    groups: dict[str, list] = {}
    for path in paths:
        text = path.read_text(encoding="utf-8")
        if not text.startswith("# colonylearn run v1"):
            continue
        rec = parse_run_record(text)
        groups.setdefault(rec.config["scenario"], []).append(rec)
    if not groups:
        print("no run records found", file=sys.stderr)
        return 1
    table = compare_scenarios(groups)
    Path(args.out).write_text(table, encoding="utf-8")
    for line in table.splitlines():
        if line.startswith("summary") or line.startswith("#"):
            print(line)
    print(f"comparison written to {args.out}")
    return 0


def _cmd_verify_theory(args) -> int:
    rng = SeededRng(args.seed)
    cfg = CompositeLossConfig(
        alpha1=args.alpha1, alpha2=args.alpha2, prob_clamp=args.prob_clamp
    )
    reports = []
    for _ in range(args.instances):
        instance, prior = theory.random_instance(
            rng, max_support=args.max_support, max_classes=args.max_classes
        )
        reports.append(theory.verify_minimizer_agreement(instance, prior, cfg))
    agreeing = sum(r.agrees for r in reports)
    csv_text = theory.agreement_report_csv(reports)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"report written to {args.out}")
    print(
        f"minimizer/Bayes agreement: {agreeing}/{len(reports)} instances "
        f"(alpha1={args.alpha1}, alpha2={args.alpha2})"
    )
    return 0 if agreeing == len(reports) else 2


def _cmd_inject_noise(args) -> int:
    ns = argparse.Namespace(
        config=None, dataset=args.dataset, data_dir=args.data_dir,
        taxonomy=args.taxonomy, seed=args.seed, noise_ratio=args.noise_ratio,
    )
    cfg = experiment_config_from_args(ns)
    rng = SeededRng(cfg.seed)
    train_ds, _, prior = harness.load_experiment_data(cfg, rng)
    _, manifest = inject_colony_noise(train_ds, prior, cfg.noise_ratio, rng)
    Path(args.out).write_text(manifest.to_csv(), encoding="utf-8")
    print(
        f"corrupted {manifest.corrupted_indices.size} of "
        f"{train_ds.sample_count} train labels; manifest written to {args.out}"
    )
    return 0


def _cmd_make_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(args.seed)
    sizes = _int_tuple(args.colony_sizes)
    train_ds, prior = synth_blobs(
        args.classes, sizes, args.per_class, args.dim, args.separation, rng,
        split="train",
    )
    test_ds, _ = synth_blobs(
        args.classes, sizes, args.test_per_class, args.dim, args.separation,
        rng, split="test",
    )
    save_npz(train_ds, out / "train.npz")
    save_npz(test_ds, out / "test.npz")
    (out / "taxonomy.txt").write_text(format_prior(prior), encoding="utf-8")
    print(
        f"wrote {train_ds.sample_count} train / {test_ds.sample_count} test "
        f"samples and taxonomy to {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colonylearn",
        description="Colony-guided opposite-label training and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run OT/RT/SD training repetitions")
    _add_train_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_cmp = sub.add_parser("compare", help="summarize run records across scenarios")
    p_cmp.add_argument("records", nargs="*", help="run record CSV files")
    p_cmp.add_argument("--runs-dir", dest="runs_dir", help="directory of run CSVs")
    p_cmp.add_argument("--out", required=True, help="comparison CSV path")
    p_cmp.set_defaults(func=_cmd_compare)

    p_thm = sub.add_parser(
        "verify-theory",
        help="exhaustive composite-risk minimizer vs Bayes on random instances",
    )
    p_thm.add_argument("--instances", type=int, default=100)
    p_thm.add_argument("--seed", type=int, default=0)
    p_thm.add_argument("--alpha1", type=float, default=1.0)
    p_thm.add_argument("--alpha2", type=float, default=0.5)
    p_thm.add_argument("--prob-clamp", dest="prob_clamp", type=float, default=1e-7)
    p_thm.add_argument("--max-support", dest="max_support", type=int, default=6)
    p_thm.add_argument("--max-classes", dest="max_classes", type=int, default=5)
    p_thm.add_argument("--out", help="report CSV path")
    p_thm.set_defaults(func=_cmd_verify_theory)

    p_noise = sub.add_parser("inject-noise", help="write a within-colony noise manifest")
    p_noise.add_argument("--dataset", required=True)
    p_noise.add_argument("--data-dir", dest="data_dir")
    p_noise.add_argument("--taxonomy")
    p_noise.add_argument("--noise-ratio", dest="noise_ratio", type=float, default=0.1)
    p_noise.add_argument("--seed", type=int, default=0)
    p_noise.add_argument("--out", required=True, help="manifest CSV path")
    p_noise.set_defaults(func=_cmd_inject_noise)

    p_synth = sub.add_parser("make-synth", help="generate a synthetic blobs dataset")
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--colony-sizes", dest="colony_sizes", default="2,2")
    p_synth.add_argument("--per-class", dest="per_class", type=int, default=200)
    p_synth.add_argument("--test-per-class", dest="test_per_class", type=int, default=100)
    p_synth.add_argument("--dim", type=int, default=16)
    p_synth.add_argument("--separation", type=float, default=8.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=_cmd_make_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
