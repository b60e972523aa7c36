"""Gaussian-mixture distributions of renewable availability.

Everything here is pure and immutable.  Quantiles of sums are computed on the
exact mixture obtained by convolving the components; curtailed (censored)
terms never get a direct quantile, they are bounded instead.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import ndtr

# Standard normal CDF: scipy's ndtr (Cephes erf/erfc rational approximations,
# relative error ~1e-16 over the double range).
_SQRT_2PI = np.sqrt(2.0 * np.pi)
BRACKET_SIGMAS = 12.0
CDF_TOL = 1e-10
_MAX_BISECT = 400


def _norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


@dataclass(frozen=True)
class GmmModel:
    """Finite Gaussian mixture ``sum_i w_i N(mu_i, sigma_i^2)`` (MW)."""

    weights: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        m = tuple(float(v) for v in self.means)
        s = tuple(float(v) for v in self.stds)
        if not (len(w) == len(m) == len(s)) or not w:
            raise ValueError("GMM needs matching, non-empty weight/mean/std lists")
        if not all(np.isfinite(w + m + s)):
            raise ValueError("GMM parameters must be finite")
        if min(w) <= 0:
            raise ValueError("GMM weights must be positive")
        if min(s) <= 0:
            raise ValueError("GMM standard deviations must be positive")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"GMM weights sum to {sum(w)!r}, expected 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @classmethod
    def from_components(cls, components: Iterable[Sequence[float]]) -> "GmmModel":
        comps = [tuple(c) for c in components]
        return cls(*zip(*comps)) if comps else cls((), (), ())

    @classmethod
    def normal(cls, mean: float, std: float) -> "GmmModel":
        return cls((1.0,), (mean,), (std,))

    @property
    def components(self) -> list:
        return list(zip(self.weights, self.means, self.stds))

    @cached_property
    def _arrays(self):
        return np.array(self.weights), np.array(self.means), np.array(self.stds)

    def cdf(self, x):
        w, mu, sd = self._arrays
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - mu) / sd
        return np.clip(np.sum(w * ndtr(z), axis=-1), 0.0, 1.0)

    def pdf(self, x):
        w, mu, sd = self._arrays
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - mu) / sd
        return np.sum(w * _norm_pdf(z) / sd, axis=-1)

    def mean(self) -> float:
        w, mu, _ = self._arrays
        return float(w @ mu)

    def bracket(self) -> tuple[float, float]:
        _, mu, sd = self._arrays
        return float(np.min(mu - BRACKET_SIGMAS * sd)), float(np.max(mu + BRACKET_SIGMAS * sd))

    def scaled(self, c: float) -> "GmmModel":
        """Distribution of ``c * X``; ``c`` must be nonzero."""
        if c == 0:
            raise ValueError("scaling by zero gives a point mass, not a GMM")
        return GmmModel(self.weights, tuple(c * m for m in self.means),
                        tuple(abs(c) * s for s in self.stds))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        w, mu, sd = self._arrays
        k = rng.choice(len(w), size=n, p=w) if len(w) > 1 else np.zeros(n, dtype=int)
        return mu[k] + sd[k] * rng.standard_normal(n)


@dataclass(frozen=True)
class CensoredGmm:
    """Law of ``min(X, cap)`` for an available output ``X ~ base``.

    ``support_max`` is the physical capacity of the unit (available output is
    clamped to it); it is optional and only used for bounding terms that enter
    a combination with a negative coefficient.
    """

    base: GmmModel
    cap: float
    support_max: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.cap) or self.cap < 0:
            raise ValueError("curtailment cap must be finite and nonnegative")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.cap, 1.0, self.base.cdf(x))

    def point_mass(self) -> float:
        return float(1.0 - self.base.cdf(self.cap))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.minimum(self.base.sample(rng, n), self.cap)


Distribution = Union[GmmModel, CensoredGmm]


@dataclass(frozen=True)
class LinearCombo:
    """``sum_j c_j Y_j`` over independent terms ``Y_j``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(c), d) for c, d in self.terms)
        if not terms:
            raise ValueError("a linear combination needs at least one term")
        for c, d in terms:
            if not np.isfinite(c):
                raise ValueError("combination coefficients must be finite")
            if not isinstance(d, (GmmModel, CensoredGmm)):
                raise TypeError(f"unsupported term distribution {type(d).__name__}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def of(cls, *pairs) -> "LinearCombo":
        return cls(tuple(pairs))

    def is_censored(self, j: int) -> bool:
        return isinstance(self.terms[j][1], CensoredGmm)

    @property
    def censored_indices(self) -> list:
        return [j for j in range(len(self.terms)) if self.is_censored(j)]

    def to_gmm(self) -> GmmModel | None:
        """Exact mixture of the combination, or None if every coefficient is zero."""
        return combine(self.terms)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.zeros(n)
        for c, d in self.terms:
            out += c * d.sample(rng, n)
        return out


def combine(terms: Iterable) -> GmmModel | None:
    """Mixture law of ``sum c_j X_j`` for independent GMM terms.

    Component-wise cross product: weights multiply, means add, variances add.
    Zero-coefficient terms drop out.
    """
    parts = []
    for c, d in terms:
        if isinstance(d, CensoredGmm):
            raise ValueError("censored term in combination; bound it with theorem2_reduce")
        if c != 0:
            parts.append(d.scaled(c))
    if not parts:
        return None
    w = np.array([1.0])
    mu = np.array([0.0])
    var = np.array([0.0])
    for g in parts:
        gw, gm, gs = g._arrays
        w = np.outer(w, gw).ravel()
        mu = np.add.outer(mu, gm).ravel()
        var = np.add.outer(var, gs**2).ravel()
    w = w / w.sum()
    return GmmModel(tuple(w), tuple(mu), tuple(np.sqrt(var)))


def gmm_cdf(model: GmmModel, x):
    return model.cdf(x)


def _check_p(p) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability level must lie in (0, 1), got {p}")
    return p


def _bisect_quantile(model: GmmModel, p: float) -> float:
    # runs to bracket collapse rather than stopping at CDF_TOL: the x error
    # of a CDF_TOL stop is CDF_TOL / pdf, which is large in the tails
    lo, hi = model.bracket()
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 2 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
        f = float(model.cdf(mid))
        if f == p:
            return mid
        if f < p:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    if abs(float(model.cdf(q)) - p) > CDF_TOL:
        # a near-degenerate mixture can jump past p within one ulp of x;
        # a collapsed bracket that straddles p is then the exact answer
        if not float(model.cdf(lo)) <= p <= float(model.cdf(hi)):
            raise ArithmeticError(f"bisection did not reach CDF tolerance at p={p}")
    return q


def quantile(dist, p: float) -> float:
    """p-quantile of a GMM or of a combination of uncensored GMM terms."""
    p = _check_p(p)
    if isinstance(dist, LinearCombo):
        model = dist.to_gmm()
        if model is None:
            return 0.0
    elif isinstance(dist, GmmModel):
        model = dist
    else:
        raise TypeError("quantile is defined for GmmModel or LinearCombo of GMMs only")
    return _bisect_quantile(model, p)


def _as_combo(dist) -> LinearCombo:
    if isinstance(dist, LinearCombo):
        return dist
    return LinearCombo(((1.0, dist),))


def mc_quantile(dist, p: float, n: int = 10**6, seed: int = 0, return_se: bool = False):
    """Empirical p-quantile of ``n`` seeded draws (test oracle).

    With ``return_se`` the asymptotic standard error
    ``sqrt(p(1-p)/n) / f(q)`` is returned too, the density reciprocal being
    estimated from the spacing of neighbouring empirical quantiles.
    """
    p = _check_p(p)
    if n < 1000:
        raise ValueError("Monte-Carlo quantiles need at least 1000 draws")
    rng = np.random.default_rng(seed)
    x = _as_combo(dist).sample(rng, n)
    q = float(np.quantile(x, p))
    if not return_se:
        return q
    h = min(0.5 * n ** (-1.0 / 3.0), p / 2, (1 - p) / 2)
    lo, hi = np.quantile(x, [p - h, p + h])
    se = (hi - lo) / (2 * h) * np.sqrt(p * (1 - p) / n)
    return q, float(se)


# ---------------------------------------------------------------------------
# curtailment penalty
# ---------------------------------------------------------------------------

def expected_overflow(model: GmmModel, r: float, upper: float) -> float:
    """``int_r^upper (x - r) pdf(x) dx`` in closed form."""
    w, mu, sd = model._arrays
    a = (r - mu) / sd
    b = (upper - mu) / sd
    mass = ndtr(b) - ndtr(a)
    val = (mu - r) * mass + sd * (_norm_pdf(a) - _norm_pdf(b))
    return float(w @ val)


def _unit_terms(unit, t, r):
    cap = float(unit.capacity)
    if not (0.0 <= r <= cap):
        raise ValueError(f"cap {r} outside [0, {cap}] for unit {unit.id!r}")
    return unit.gmm[t], cap, float(unit.penalty)


def curtailment_penalty(unit, t: int, r: float) -> float:
    """Expected curtailment penalty of capping ``unit`` at ``r`` MW in step ``t``."""
    model, cap, k = _unit_terms(unit, t, r)
    return max(k * expected_overflow(model, r, cap), 0.0)


def penalty_derivatives(unit, t: int, r: float) -> tuple[float, float]:
    model, cap, k = _unit_terms(unit, t, r)
    first = k * float(model.cdf(r) - model.cdf(cap))
    second = k * float(model.pdf(r))
    return first, second


# ---------------------------------------------------------------------------
# bounds for combinations with censored terms
# ---------------------------------------------------------------------------

def _residual_quantile(terms, p) -> float:
    model = combine(terms)
    return 0.0 if model is None else _bisect_quantile(model, p)


def theorem2_reduce(combo: LinearCombo, subset: Iterable[int], p: float) -> tuple[float, float]:
    """Dominating bound for the quantile of a combination with censored terms.

    Censored terms in ``subset`` are replaced by their caps, the remaining
    censored terms by their available distributions.  Returns the
    deterministic part ``sum c_j cap_j`` and the quantile of what is left;
    their sum is never below the true quantile.
    """
    p = _check_p(p)
    subset = set(subset)
    censored = set(combo.censored_indices)
    if not subset <= censored:
        raise ValueError(f"terms {sorted(subset - censored)} are not censored")
    for j in censored:
        c = combo.terms[j][0]
        if c < 0:
            where = "in the chosen subset" if j in subset else "outside the subset"
            raise ValueError(f"negative coefficient {c} on censored term {j} {where}")
    det = 0.0
    rest = []
    for j, (c, d) in enumerate(combo.terms):
        if j in subset:
            det += c * d.cap
        else:
            rest.append((c, d.base if isinstance(d, CensoredGmm) else d))
    return det, _residual_quantile(rest, p)


def _subsets(items):
    items = list(items)
    return itertools.chain.from_iterable(itertools.combinations(items, k) for k in range(len(items) + 1))


def _negative_part_bound(det: float, fixed: list, neg: list, p: float) -> float:
    """Upper bound on the p-quantile of ``det + sum(fixed) + sum_j c_j min(X_j, cap_j)``
    where every ``c_j`` in ``neg`` is negative.

    ``c min(X, cap) = max(c X, c cap)`` so the sum is a maximum over the
    choices ``S`` of which terms sit at their cap; a union bound splits the
    tail mass evenly across the random choices.  When the unit capacity is
    known the pathwise shift ``c min(X, cap) <= c X + |c| (C - cap)`` is also
    valid; the smaller of the two bounds is returned.
    """
    if not neg:
        return det + _residual_quantile(fixed, p)
    choices = []
    for s in _subsets(range(len(neg))):
        s = set(s)
        d = det + sum(neg[k][0] * neg[k][1].cap for k in s)
        random = fixed + [(c, g.base) for k, (c, g) in enumerate(neg) if k not in s]
        choices.append((d, random))
    n_random = sum(1 for _, rnd in choices if combine(rnd) is not None)
    tail = (1.0 - p) / max(n_random, 1)
    union = -np.inf
    for d, rnd in choices:
        model = combine(rnd)
        union = max(union, d if model is None else d + _bisect_quantile(model, 1.0 - tail))
    best = union
    if all(g.support_max is not None for _, g in neg):
        shift = det + sum(-c * (g.support_max - g.cap) for c, g in neg)
        shift += _residual_quantile(fixed + [(c, g.base) for c, g in neg], p)
        best = min(best, shift)
    return float(best)


def quantile_upper_bound(combo: LinearCombo, p: float) -> float:
    """Tightest available upper bound on the p-quantile of ``combo``.

    Minimises the reduced bound over every subset of the positively weighted
    censored terms; negatively weighted censored terms go through
    ``_negative_part_bound``.  For combinations without censored terms this is
    the exact quantile.
    """
    p = _check_p(p)
    terms = []
    for c, d in combo.terms:
        # a cap at or above the clamped capacity never binds
        if isinstance(d, CensoredGmm) and d.support_max is not None and d.cap >= d.support_max:
            d = d.base
        terms.append((c, d))
    combo = LinearCombo(tuple(terms))
    pos = [j for j in combo.censored_indices if combo.terms[j][0] >= 0]
    neg = [combo.terms[j] for j in combo.censored_indices if combo.terms[j][0] < 0]
    plain = [(c, d) for c, d in combo.terms if isinstance(d, GmmModel)]
    best = np.inf
    for subset in _subsets(pos):
        det = sum(combo.terms[j][0] * combo.terms[j][1].cap for j in subset)
        fixed = plain + [(combo.terms[j][0], combo.terms[j][1].base) for j in pos if j not in subset]
        best = min(best, _negative_part_bound(det, fixed, neg, p))
    return float(best)
