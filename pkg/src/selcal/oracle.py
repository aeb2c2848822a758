"""Exact ground truth for small problems.

Finite distributions with known posteriors give population calibration
errors and Brier scores by enumeration.  Uniform-score profiles give the
population AURC in closed form.  Gaussian mixtures with exact posteriors
stand in for real datasets in training runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import argmax_predict, empirical_error, softmax
from .losses import cross_entropy
from .metrics import mc_aurc


@dataclass(frozen=True)
class DiscreteDistribution:
    px: np.ndarray         # (M,) atom masses
    posterior: np.ndarray  # (M, k) rows P(y = c | x_m)
    points: np.ndarray | None = None

    def __post_init__(self):
        px = np.asarray(self.px, dtype=np.float64)
        post = np.atleast_2d(np.asarray(self.posterior, dtype=np.float64))
        if px.ndim != 1 or px.shape[0] != post.shape[0]:
            raise ValueError("px and posterior disagree on the number of atoms")
        if np.any(px < 0) or abs(px.sum() - 1.0) > 1e-12:
            raise ValueError("atom masses must be non-negative and sum to 1")
        if np.any(post < 0) or np.max(np.abs(post.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("posterior rows must lie on the simplex")
        object.__setattr__(self, "px", px)
        object.__setattr__(self, "posterior", post)


@dataclass(frozen=True)
class TableModel:
    preds: np.ndarray  # (M, k), row m is f(x_m)

    def __post_init__(self):
        preds = np.atleast_2d(np.asarray(self.preds, dtype=np.float64))
        if np.any(preds < 0) or np.max(np.abs(preds.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("model rows must lie on the simplex")
        object.__setattr__(self, "preds", preds)


def _groups(values):
    """Integer group id per row; rows are grouped by exact equality."""
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    return np.unique(values, axis=0, return_inverse=True)[1].reshape(-1)


def _group_mean(ids, px, rows):
    """Mass per group and px-weighted mean of ``rows`` per group."""
    mass = np.bincount(ids, weights=px)
    # normalising weights first keeps single-atom groups bitwise exact
    w = px / mass[ids]
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        return mass, np.bincount(ids, weights=w * rows)
    return mass, np.stack([np.bincount(ids, weights=w * rows[:, c]) for c in range(rows.shape[1])], axis=1)


def conditional_label_mean(dist: DiscreteDistribution, model: TableModel) -> np.ndarray:
    """``E[y | f(x)]`` evaluated at every atom."""
    ids = _groups(model.preds)
    _, mean = _group_mean(ids, dist.px, dist.posterior)
    return mean[ids]


def population_ce_rho(dist: DiscreteDistribution, model: TableModel, rho: float = 1.0) -> float:
    if rho < 1:
        raise ValueError("rho must be >= 1")
    gap = np.abs(model.preds - conditional_label_mean(dist, model)) ** rho
    return float(np.sum(dist.px * gap.sum(axis=1)) ** (1.0 / rho))


def population_top_ece(dist: DiscreteDistribution, model: TableModel) -> float:
    """``E |max f - P(y = argmax f | max f)|``."""
    conf = model.preds.max(axis=1)
    pred = argmax_predict(model.preds)
    hit = dist.posterior[np.arange(conf.size), pred]
    ids = _groups(conf)
    mass, acc = _group_mean(ids, dist.px, hit)
    _, mean_conf = _group_mean(ids, dist.px, conf)
    return float(np.sum(mass * np.abs(acc - mean_conf)))


def population_cwece(dist: DiscreteDistribution, model: TableModel, rho: float = 1.0) -> float:
    k = model.preds.shape[1]
    total = 0.0
    for c in range(k):
        fc = model.preds[:, c]
        ids = _groups(fc)
        _, freq = _group_mean(ids, dist.px, dist.posterior[:, c])
        total += float(np.sum(dist.px * np.abs(fc - freq[ids]) ** rho))
    return total ** (1.0 / rho) / k


def population_brier(dist: DiscreteDistribution, model: TableModel) -> float:
    """``E ||f(x) - y||^2`` expanded over the posterior of each atom."""
    f = model.preds
    per_atom = np.sum(f * f, axis=1) - 2.0 * np.sum(f * dist.posterior, axis=1) + 1.0
    return float(np.sum(dist.px * per_atom))


def expected_conditional_variance(dist: DiscreteDistribution, model: TableModel) -> float:
    """``E[ sum_c Var(y_c | f(x)) ]``, the part of the Brier score calibration cannot remove."""
    ybar = conditional_label_mean(dist, model)
    return float(np.sum(dist.px * np.sum(ybar * (1.0 - ybar), axis=1)))


def random_instance(rng: np.random.Generator, atoms: int, k: int, distinct_preds: int | None = None):
    """Random ``(dist, model)`` pair; predictions repeat when ``distinct_preds < atoms``."""
    px = rng.dirichlet(np.ones(atoms))
    px /= px.sum()
    posterior = rng.dirichlet(np.ones(k), size=atoms)
    table = rng.dirichlet(np.ones(k), size=distinct_preds or atoms)
    preds = table[rng.integers(0, table.shape[0], size=atoms)]
    return DiscreteDistribution(px, posterior), TableModel(preds)


PROFILES = ("constant", "linear")


def population_aurc_closed_form(profile: str, c: float = 1.0) -> float:
    """Population AURC for scores uniform on (0, 1), so the score CDF is the identity.

    ``constant``: loss ``c`` everywhere, AURC ``c * int -ln(1-u) du = c``.
    ``linear``: loss ``1 - u`` at score ``u``, AURC ``int -t ln t dt = 1/4``.
    """
    if profile == "constant":
        return float(c)
    if profile == "linear":
        return 0.25
    raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def sample_profile(profile: str, n: int, rng: np.random.Generator, c: float = 1.0):
    """Draw ``(losses, scores)`` for ``n`` samples of a closed-form profile."""
    scores = rng.uniform(0.0, 1.0, size=n)
    if profile == "constant":
        return np.full(n, float(c)), scores
    if profile == "linear":
        return 1.0 - scores, scores
    raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


@dataclass(frozen=True)
class AurcBoundCheck:
    lhs: float
    rhs: float
    competitors: tuple[float, ...] = field(default_factory=tuple)

    @property
    def bound_ok(self) -> bool:
        return self.lhs >= self.rhs

    @property
    def minimal(self) -> bool:
        return all(self.lhs <= v + 1e-12 for v in self.competitors)

    @property
    def ok(self) -> bool:
        return self.bound_ok and self.minimal


def aurc_error_bound(n: int, err: float) -> float:
    """``n ln2 / (2(n+1)) err^2 + ln2 / (2(n+1)) err``."""
    return n * math.log(2) / (2 * (n + 1)) * err ** 2 + math.log(2) / (2 * (n + 1)) * err


def aurc_lower_bound_check(p, labels, competitor_scores=()) -> AurcBoundCheck:
    """Empirical AURC under the loss-aligned CSF ``g = -loss`` versus the error bound
    and versus the AURC obtained with each competitor score vector."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    losses = np.asarray(cross_entropy(p, labels).value)
    lhs = mc_aurc(losses, -losses)
    rhs = aurc_error_bound(p.shape[0], empirical_error(p, labels))
    comps = tuple(mc_aurc(losses, np.asarray(s, dtype=np.float64)) for s in competitor_scores)
    return AurcBoundCheck(lhs, rhs, comps)


@dataclass(frozen=True)
class MixtureSpec:
    means: np.ndarray       # (k, d)
    variance: float = 1.0   # shared isotropic variance
    priors: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if means.shape[0] < 2:
            raise ValueError("a mixture needs at least two classes")
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError("variance must be positive and finite")
        k = means.shape[0]
        priors = np.full(k, 1.0 / k) if self.priors is None else np.asarray(self.priors, dtype=np.float64)
        if priors.shape != (k,) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be a probability vector with one entry per class")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def mixture_posterior(spec: MixtureSpec, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sq = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore"):
        log_prior = np.log(spec.priors)
    return softmax(log_prior[None, :] - sq / (2.0 * spec.variance))


def gen_mixture(spec: MixtureSpec, n: int, seed: int | None = None):
    """Draw ``n`` i.i.d. samples; returns ``(features, labels, posteriors)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    labels = rng.choice(spec.k, size=n, p=spec.priors)
    x = spec.means[labels] + math.sqrt(spec.variance) * rng.standard_normal((n, spec.d))
    return x, labels, mixture_posterior(spec, x)


def polygon_mixture(k: int = 3, radius: float = 1.55, variance: float = 1.0, seed: int = 0) -> MixtureSpec:
    """``k`` equiprobable 2-D classes with means on a regular polygon.

    The defaults give roughly 15% Bayes error.
    """
    angles = np.pi / 2 + 2 * np.pi * np.arange(k) / k
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureSpec(means=means, variance=variance, seed=seed)


def bayes_error(spec: MixtureSpec, n: int = 200_000, seed: int = 12345) -> float:
    """Monte-Carlo estimate of ``E[1 - max_c P(y = c | x)]`` using exact posteriors."""
    _, _, post = gen_mixture(spec, n, seed=seed)
    return float(np.mean(1.0 - post.max(axis=1)))
