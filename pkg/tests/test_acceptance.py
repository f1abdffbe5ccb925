"""Acceptance suite: one test (or test group) per shipping criterion.

Each test prints an ``ACCEPTANCE <id> ...: PASS/FAIL`` line; run with
``pytest tests/test_acceptance.py -s`` to see them all. The Fashion-MNIST
legs need the real IDX files (place them under ./data or point
COLONYLEARN_DATA at them) and skip loudly when the files are absent.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from colonylearn.datasets import Dataset, inject_colony_noise
from colonylearn.harness import (
    ExperimentConfig,
    cifar10_paths,
    fashion_mnist_paths,
    format_run_record,
    run_experiment,
    run_repetition,
)
from colonylearn.losses import CompositeLossConfig, composite_grad_logits, composite_loss, softmax
from colonylearn.network import SolverConfig, backward, init_mlp, logits_batch
from colonylearn.sampler import SeededRng, sample_opposite_sd_many
from colonylearn.taxonomy import builtin_prior
from colonylearn.theory import (
    monte_carlo_consistency,
    random_instance,
    agreement_report_csv,
    verify_minimizer_agreement,
)
from colonylearn import datasets as ds_mod

DATA_DIR = os.environ.get(
    "COLONYLEARN_DATA", str(Path(__file__).resolve().parent.parent / "data")
)
FM_PATHS = fashion_mnist_paths(DATA_DIR)
CIFAR10_PATHS = cifar10_paths(DATA_DIR)

FM_SKIP = (
    "Fashion-MNIST IDX files not found (looked under "
    f"{DATA_DIR!r}; set COLONYLEARN_DATA to override) - "
    "this environment has no dataset mirror, so the Fashion-MNIST leg "
    "of criterion 6/7 cannot run here"
)


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def fd_grad(f, z, h=1e-6):
    g = np.zeros_like(z, dtype=np.float64)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestCriterion1SamplerUniformity:
    def test_chi_square_per_class(self):
        prior = builtin_prior("cifar10")
        rng = SeededRng(11)
        started = time.perf_counter()
        worst_p = 1.0
        colony_hits = 0
        for y in range(10):
            draws = sample_opposite_sd_many(prior, y, rng, 1_000_000)
            colony_hits += int(np.isin(draws, prior.colony_of(y).members).sum())
            pool = prior.opposite_pool_array(y)
            counts = np.bincount(draws, minlength=10)[pool]
            worst_p = min(worst_p, float(stats.chisquare(counts)[1]))
        elapsed = time.perf_counter() - started
        report(
            "1 sampler-uniformity",
            worst_p > 0.01 and colony_hits == 0 and elapsed < 30,
            f"10x1e6 draws, worst chi-square p={worst_p:.4f} (>0.01), "
            f"same-colony draws={colony_hits}, {elapsed:.1f}s (<30s)",
        )


class TestCriterion2GradientCorrectness:
    def test_logit_gradients_and_full_network(self):
        started = time.perf_counter()
        rng = np.random.default_rng(2)
        worst = 0.0
        for c, count in ((3, 400), (10, 400), (100, 200)):
            for _ in range(count):
                z = rng.normal(0, 1.5, size=c)
                y = int(rng.integers(c))
                yb = (y + 1 + int(rng.integers(c - 1))) % c
                cfg = CompositeLossConfig(
                    alpha1=float(rng.uniform(0.1, 2.0)),
                    alpha2=float(rng.uniform(0.0, 2.0)),
                )
                got = composite_grad_logits(z, y, yb, cfg)
                oracle = fd_grad(
                    lambda zz: composite_loss(softmax(zz), y, yb, cfg).composite, z
                )
                worst = max(worst, rel_err(got, oracle))
        logit_ok = worst <= 1e-6

        # full-network check on the 2-4-3 reference model, h = 1e-5
        cfg = CompositeLossConfig(alpha1=1.0, alpha2=0.5)
        net_worst = 0.0
        for seed in range(3):
            model = init_mlp(2, (4,), 3, SeededRng(seed))
            x = rng.normal(size=2)
            y = int(rng.integers(3))
            yb = (y + 1 + int(rng.integers(2))) % 3
            grads = backward(model, x, y, yb, cfg)

            def loss_at_params():
                logits = logits_batch(model, x[None, :])[0]
                return composite_loss(softmax(logits), y, yb, cfg).composite

            h = 1e-5
            for layer, (gw, gb) in zip(model.layers, grads):
                for arr, got in ((layer.weight, gw), (layer.bias, gb)):
                    flat, gflat = arr.ravel(), got.ravel()
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + h
                        up = loss_at_params()
                        flat[i] = orig - h
                        down = loss_at_params()
                        flat[i] = orig
                        fd = (up - down) / (2 * h)
                        denom = max(abs(fd), abs(gflat[i]), 1.0)
                        net_worst = max(net_worst, abs(fd - gflat[i]) / denom)
        net_ok = net_worst <= 1e-5
        elapsed = time.perf_counter() - started
        report(
            "2 gradient-correctness",
            logit_ok and net_ok and elapsed < 60,
            f"1000 logit tuples worst rel err={worst:.2e} (<=1e-6), "
            f"2-4-3 network worst rel err={net_worst:.2e} (<=1e-5), "
            f"{elapsed:.1f}s (<60s)",
        )


class TestCriterion3TransitionConsistency:
    def test_monte_carlo_vs_induced(self):
        prior = builtin_prior("cifar10")
        rng = SeededRng(303)
        started = time.perf_counter()
        worst = 0.0
        for _ in range(20):
            s = np.maximum(rng.random(10), 1e-12)
            s /= s.sum()
            worst = max(worst, monte_carlo_consistency(s, prior, rng, 1_000_000))
        elapsed = time.perf_counter() - started
        report(
            "3 transition-consistency",
            worst < 0.01 and elapsed < 60,
            f"20 random s at 1e6 draws, worst L_inf={worst:.5f} (<0.01), "
            f"{elapsed:.1f}s (<60s)",
        )


class TestCriterion4MinimizerVsBayes:
    def test_hundred_random_instances(self, tmp_path):
        cfg = CompositeLossConfig(alpha1=1.0, alpha2=0.5)
        rng = SeededRng(404)
        started = time.perf_counter()
        reports = []
        for _ in range(100):
            instance, prior = random_instance(rng, max_support=6, max_classes=5)
            reports.append(verify_minimizer_agreement(instance, prior, cfg))
        elapsed = time.perf_counter() - started
        agreeing = sum(r.agrees for r in reports)
        out = tmp_path / "theorem_report.csv"
        out.write_text(agreement_report_csv(reports), encoding="utf-8")
        failures = [
            f"instance {i}: bayes={r.bayes_labeling} minimizer="
            f"{r.minimizing_labelings[0]} risk_gap={r.risk_gap:.4f}"
            for i, r in enumerate(reports)
            if not r.agrees
        ]
        detail = (
            f"agreement {agreeing}/100 (need 100) in {elapsed:.1f}s (<120s); "
            f"report at {out}. "
        )
        if failures:
            detail += (
                "Disagreements are real, not a checker bug: for a point with "
                "conditional s the composite-risk minimizer is "
                "argmax_k[alpha1*s_k - alpha2*(C^T s)_k], and since (C^T s) is "
                "constant within a colony, a runner-up class from a colony "
                "with a smaller opposite-hit rate can overtake the Bayes "
                "class across a colony boundary (e.g. s=(0.5,0.4,0.1) with "
                "colonies {0},{1,2} at alpha2=0.5). First failures: "
                + "; ".join(failures[:3])
            )
        report("4 risk-minimizer-vs-bayes", agreeing == 100 and elapsed < 120, detail)


class TestCriterion5NoiseInjector:
    def test_cifar10_train_quota(self):
        prior = builtin_prior("cifar10")
        started = time.perf_counter()
        if CIFAR10_PATHS is not None:
            blobs = [p.read_bytes() for p in CIFAR10_PATHS[:5]]
            train = ds_mod.load_cifar(blobs, "cifar10", split="train")
            source = "official binaries"
        else:
            # label-structure surrogate: the real train split is exactly
            # 5000 per class; the injector never reads features
            labels = np.repeat(np.arange(10), 5000)
            train = Dataset(
                features=np.zeros((50_000, 4)),
                labels=labels,
                split="train",
                provenance="cifar10-shaped surrogate (5000 labels per class)",
            )
            source = "surrogate with the real label multiset (no local CIFAR-10 files)"
        noisy, manifest = inject_colony_noise(train, prior, 0.1, SeededRng(505))
        _, manifest2 = inject_colony_noise(train, prior, 0.1, SeededRng(505))
        elapsed = time.perf_counter() - started
        within = all(
            prior.colony_index_of(int(c)) == prior.colony_index_of(int(o)) and c != o
            for o, c in zip(manifest.original_labels, manifest.corrupted_labels)
        )
        reproducible = np.array_equal(
            manifest.corrupted_indices, manifest2.corrupted_indices
        ) and np.array_equal(manifest.corrupted_labels, manifest2.corrupted_labels)
        changed = int(np.sum(noisy.labels != train.labels))
        report(
            "5 noise-injector",
            manifest.corrupted_indices.size == 5000
            and changed == 5000
            and within
            and reproducible
            and elapsed < 10,
            f"{source}: exactly {changed} corrupted of 50000, all within-colony "
            f"and != original, manifest reproducible={reproducible}, "
            f"{elapsed:.1f}s (<10s)",
        )


BLOB_SOLVER = SolverConfig(kind="adam", learning_rate=3e-3, epochs=30, batch_size=64)
FM_SOLVER = SolverConfig(kind="adam", learning_rate=1e-3, epochs=15, batch_size=128)


def blob_cfg(scenario: str) -> ExperimentConfig:
    return ExperimentConfig(
        dataset="blobs", scenario=scenario, noise_ratio=0.1, solver=BLOB_SOLVER,
        seed=2000, repetitions=3, hidden_sizes=(32,), blob_per_class=200,
        blob_test_per_class=100, blob_dim=16, blob_separation=8.0,
    )


def fm_cfg(scenario: str) -> ExperimentConfig:
    return ExperimentConfig(
        dataset="fashion-mnist", data_dir=DATA_DIR, scenario=scenario,
        solver=FM_SOLVER, seed=3000, repetitions=3,
    )


@pytest.fixture(scope="module")
def blob_runs():
    return {s: run_experiment(blob_cfg(s)) for s in ("OT", "SD")}


@pytest.fixture(scope="module")
def fm_runs():
    if FM_PATHS is None:
        pytest.skip(FM_SKIP)
    return {s: run_experiment(fm_cfg(s)) for s in ("OT", "SD")}


class TestCriterion6DeskScaleTraining:
    def test_fashion_mnist_accuracy_floor(self, fm_runs):
        accs = [r.final_accuracy for r in fm_runs["OT"] + fm_runs["SD"]]
        slowest = max(r.wall_time_s for r in fm_runs["OT"] + fm_runs["SD"])
        report(
            "6a fashion-mnist-accuracy",
            min(accs) >= 0.88 and slowest <= 600,
            f"MLP-3/adam finals {['%.4f' % a for a in accs]} (floor 0.88; "
            "full-scale reference 0.915-0.9178, not a desk-scale target), "
            f"slowest run {slowest:.0f}s (<=600s)",
        )

    def test_fashion_mnist_sd_vs_ot(self, fm_runs):
        ot = np.mean([r.final_accuracy for r in fm_runs["OT"]])
        sd = np.mean([r.final_accuracy for r in fm_runs["SD"]])
        gap_pp = 100 * (sd - ot)
        report(
            "6b fashion-mnist-sd-vs-ot",
            sd >= ot - 0.003,
            f"3-seed means OT={ot:.4f} SD={sd:.4f}, SD-OT={gap_pp:+.2f}pp "
            "(floor -0.3pp; positive gaps mirror the full-scale reference "
            "but are within seed noise, reported not gated)",
        )

    def test_blobs_noisy_sd_vs_ot(self, blob_runs):
        ot = np.mean([r.final_accuracy for r in blob_runs["OT"]])
        sd = np.mean([r.final_accuracy for r in blob_runs["SD"]])
        report(
            "6c blobs-noisy-sd-vs-ot",
            sd >= ot - 0.005,
            f"10% within-colony noise, 3-seed means OT={ot:.4f} SD={sd:.4f}, "
            f"SD-OT={100 * (sd - ot):+.2f}pp (floor -0.5pp)",
        )

    def test_sd_loss_convergence(self, blob_runs):
        ratios = [
            rec.rows[-1]["composite_loss"] / rec.rows[0]["composite_loss"]
            for rec in blob_runs["SD"]
        ]
        if FM_PATHS is not None:
            fm_rec, _ = run_repetition(fm_cfg("SD"), 0)
            ratios.append(
                fm_rec.rows[-1]["composite_loss"] / fm_rec.rows[0]["composite_loss"]
            )
        report(
            "6d sd-loss-convergence",
            max(ratios) <= 0.5,
            f"final/epoch-1 composite ratios {['%.3f' % r for r in ratios]} (<=0.5)",
        )

    def test_runtime_budget(self, blob_runs):
        worst = max(r.wall_time_s for recs in blob_runs.values() for r in recs)
        report(
            "6e runtime-budget",
            worst <= 600,
            f"slowest blobs run {worst:.1f}s (<=600s per run)",
        )


class TestCriterion7Determinism:
    def test_rerun_byte_identical(self, blob_runs):
        rec_a, _ = run_repetition(blob_cfg("SD"), 0)
        rec_b, _ = run_repetition(blob_cfg("SD"), 0)
        blob_same = format_run_record(rec_a) == format_run_record(rec_b)
        fm_same = True
        fm_note = "fashion-mnist leg skipped (no data)"
        if FM_PATHS is not None:
            fm_a, _ = run_repetition(fm_cfg("SD"), 0)
            fm_b, _ = run_repetition(fm_cfg("SD"), 0)
            fm_same = format_run_record(fm_a) == format_run_record(fm_b)
            fm_note = f"fashion-mnist rerun byte-identical={fm_same}"
        assert format_run_record(rec_a).encode() == format_run_record(rec_b).encode()
        report(
            "7 determinism",
            blob_same and fm_same,
            f"blobs rerun byte-identical={blob_same}; {fm_note}",
        )
