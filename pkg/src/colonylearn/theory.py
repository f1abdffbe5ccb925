"""Brute-force checks of the opposite-label probability model.

Three layers of checking, all on small discrete instances:

  * the class-to-opposite transition matrix C, with C[i][j] uniform over
    the opposite pool of i and zero inside i's colony;
  * Monte-Carlo agreement between sampled opposite-label frequencies and
    the induced distribution C^T s;
  * exhaustive enumeration of deterministic labelings of a finite support,
    comparing the composite-risk minimizer against the per-point Bayes
    classifier (argmax of the true conditional distribution).

For a labeling that assigns class k to a point with conditional
distribution s, the expected composite risk contribution is

    kappa * [alpha1 * (1 - s_k) + alpha2 * (C^T s)_k],   kappa = -log(clamp)

i.e. the cross-entropy term fires on every miss and the opposite term fires
exactly when the sampled opposite label hits the predicted class. The
opposite term is evaluated analytically through C, not by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .losses import CompositeLossConfig, validate_prob_vector
from .sampler import SeededRng, sample_opposite_sd_many
from .taxonomy import Colony, SemanticPrior

MAX_SUPPORT = 8
MAX_CLASSES = 6

MARGIN_FLOOR = 1e-3


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic operator: entries[i][j] = P(opposite=j | true=i)."""

    entries: np.ndarray
    prior: SemanticPrior


def build_transition(prior: SemanticPrior) -> TransitionMatrix:
    c = prior.class_count
    entries = np.zeros((c, c))
    for i in range(c):
        pool = prior.opposite_pool_array(i)
        entries[i, pool] = 1.0 / pool.size
    return TransitionMatrix(entries=entries, prior=prior)


def induced_opposite(s: np.ndarray, transition: TransitionMatrix) -> np.ndarray:
    """The opposite-label distribution C^T s induced by true-label mix s."""
    s = validate_prob_vector(s)
    c = transition.entries.shape[0]
    if s.shape != (c,):
        raise ValueError(f"s has length {s.shape[0]}, transition is {c}x{c}")
    return transition.entries.T @ s


def monte_carlo_consistency(
    s: np.ndarray, prior: SemanticPrior, rng: SeededRng, draws: int
) -> float:
    """L-infinity gap between sampled opposite frequencies and C^T s.

    Samples true labels from s by inverse-CDF on the float stream, then
    opposite labels through the SD sampler, grouped per class (same draw
    law as per-sample calls, vectorized). Shrinks like draws**-0.5.
    """
    if draws < 100_000:
        raise ValueError(f"need at least 1e5 draws for a stable estimate, got {draws}")
    s = validate_prob_vector(s)
    c = prior.class_count
    if s.shape != (c,):
        raise ValueError(f"s has length {s.shape[0]} for {c} classes")
    transition = build_transition(prior)
    cum = np.cumsum(s)
    ys = np.searchsorted(cum, rng.random(draws), side="right")
    ys = np.minimum(ys, c - 1)
    counts = np.bincount(ys, minlength=c)
    freq = np.zeros(c)
    for i in range(c):
        if counts[i] == 0:
            continue
        drawn = sample_opposite_sd_many(prior, i, rng, int(counts[i]))
        freq += np.bincount(drawn, minlength=c)
    freq /= draws
    return float(np.max(np.abs(freq - induced_opposite(s, transition))))


@dataclass(frozen=True)
class DiscreteInstance:
    """A finite joint distribution over (support point, class)."""

    support: np.ndarray  # [P, d] feature points (values unused by the risk)
    point_mass: np.ndarray  # [P], sums to 1
    cond: np.ndarray  # [P, c], each row P(Y=. | X=x) sums to 1

    def __post_init__(self):
        validate_prob_vector(self.point_mass)
        if self.cond.ndim != 2 or self.cond.shape[0] != self.point_mass.shape[0]:
            raise ValueError("cond must have one row per support point")
        for row in self.cond:
            validate_prob_vector(row)

    @property
    def point_count(self) -> int:
        return self.cond.shape[0]

    @property
    def class_count(self) -> int:
        return self.cond.shape[1]


@dataclass(frozen=True)
class AgreementReport:
    """Outcome of one exhaustive minimizer-vs-Bayes comparison.

    risk_gap = (lowest risk among labelings differing from Bayes somewhere)
    minus (risk of the Bayes labeling); positive means Bayes strictly won.
    """

    agrees: bool
    bayes_labeling: tuple[int, ...]
    minimizing_labelings: tuple[tuple[int, ...], ...]
    bayes_risk: float
    min_risk: float
    risk_gap: float


def bayes_labeling(instance: DiscreteInstance) -> np.ndarray:
    """Per-point argmax of the conditional class distribution."""
    return np.argmax(instance.cond, axis=1)


def margins(instance: DiscreteInstance) -> np.ndarray:
    """Per-point gap between the top two conditional probabilities."""
    part = np.sort(instance.cond, axis=1)
    return part[:, -1] - part[:, -2]


def labeling_risks(
    instance: DiscreteInstance, prior: SemanticPrior, cfg: CompositeLossConfig
) -> np.ndarray:
    """Expected composite risk of assigning class k at point x, as [P, c]."""
    if instance.class_count != prior.class_count:
        raise ValueError(
            f"instance has {instance.class_count} classes, prior has {prior.class_count}"
        )
    kappa = -math.log(cfg.prob_clamp)
    transition = build_transition(prior)
    s = instance.cond  # [P, c]
    miss = cfg.alpha1 * (1.0 - s)
    opposite_hit = cfg.alpha2 * (s @ transition.entries)  # [P, c] of (C^T s_x)_k
    return kappa * instance.point_mass[:, None] * (miss + opposite_hit)


def verify_minimizer_agreement(
    instance: DiscreteInstance,
    prior: SemanticPrior,
    cfg: CompositeLossConfig,
    tie_tol: float = 1e-12,
) -> AgreementReport:
    """Enumerate every deterministic labeling and compare with Bayes.

    Requires |support| <= 8 and c <= 6 (enumeration size) and a top-2
    conditional gap of at least 1e-3 at every point (non-degenerate
    margins). Every labeling within tie_tol of the minimum risk counts as
    a minimizer; agreement demands they all equal the Bayes labeling.
    """
    P, c = instance.point_count, instance.class_count
    if P > MAX_SUPPORT or c > MAX_CLASSES:
        raise ValueError(
            f"enumeration size exceeded: support {P} > {MAX_SUPPORT} or "
            f"classes {c} > {MAX_CLASSES}"
        )
    worst = float(margins(instance).min())
    if worst < MARGIN_FLOOR:
        raise ValueError(
            f"degenerate margin {worst:.2e} < {MARGIN_FLOOR:.0e}; "
            "minimizers are not comparable under ties"
        )
    per_point = labeling_risks(instance, prior, cfg)
    bayes = tuple(int(b) for b in bayes_labeling(instance))
    rows = np.arange(P)

    bayes_risk = float(per_point[rows, list(bayes)].sum())
    min_risk = math.inf
    minimizers: list[tuple[int, ...]] = []
    best_disagreeing = math.inf
    for labeling in product(range(c), repeat=P):
        risk = float(per_point[rows, list(labeling)].sum())
        if risk < min_risk - tie_tol:
            min_risk = risk
            minimizers = [labeling]
        elif risk <= min_risk + tie_tol:
            minimizers.append(labeling)
        if labeling != bayes and risk < best_disagreeing:
            best_disagreeing = risk
    agrees = all(m == bayes for m in minimizers)
    return AgreementReport(
        agrees=agrees,
        bayes_labeling=bayes,
        minimizing_labelings=tuple(minimizers),
        bayes_risk=bayes_risk,
        min_risk=min_risk,
        risk_gap=best_disagreeing - bayes_risk,
    )


def _random_partition(c: int, rng: SeededRng) -> tuple[tuple[int, ...], ...]:
    """Random partition of range(c) into between 2 and c colonies."""
    k = 2 + rng.randint_below(c - 1)
    classes = [int(v) for v in rng.permutation(c)]
    cut_pool = list(range(1, c))
    cuts = []
    for _ in range(k - 1):
        cuts.append(cut_pool.pop(rng.randint_below(len(cut_pool))))
    cuts.sort()
    bounds = [0, *cuts, c]
    return tuple(
        tuple(sorted(classes[bounds[i] : bounds[i + 1]])) for i in range(k)
    )


def _random_simplex(n: int, rng: SeededRng) -> np.ndarray:
    """Uniform (flat-Dirichlet) point on the n-simplex via exponentials."""
    e = -np.log(np.maximum(rng.random(n), 1e-300))
    return e / e.sum()


def random_instance(
    rng: SeededRng, max_support: int = 6, max_classes: int = 5
) -> tuple[DiscreteInstance, SemanticPrior]:
    """A random non-degenerate instance plus a random >=2-colony prior."""
    c = 2 + rng.randint_below(max_classes - 1)
    p = 1 + rng.randint_below(max_support)
    parts = _random_partition(c, rng)
    prior = SemanticPrior(
        class_count=c,
        class_names=tuple(f"class_{i}" for i in range(c)),
        colonies=tuple(
            Colony(name=f"colony_{gi}", members=m) for gi, m in enumerate(parts)
        ),
    )
    cond = np.empty((p, c))
    for i in range(p):
        while True:
            row = _random_simplex(c, rng)
            top2 = np.sort(row)[-2:]
            if top2[1] - top2[0] >= MARGIN_FLOOR:
                cond[i] = row
                break
    instance = DiscreteInstance(
        support=np.arange(p, dtype=np.float64).reshape(p, 1),
        point_mass=_random_simplex(p, rng),
        cond=cond,
    )
    return instance, prior


def agreement_report_csv(reports) -> str:
    """CSV rows: instance id, agreement flag, risk gap, labelings."""
    lines = ["instance,agrees,risk_gap,bayes_labeling,minimizing_labeling"]
    for i, rep in enumerate(reports):
        minimizer = rep.minimizing_labelings[0]
        lines.append(
            f"{i},{int(rep.agrees)},{rep.risk_gap!r},"
            f"{'|'.join(map(str, rep.bayes_labeling))},"
            f"{'|'.join(map(str, minimizer))}"
        )
    return "\n".join(lines) + "\n"
