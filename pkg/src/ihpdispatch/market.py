"""Level-of-use pricing, Cobb-Douglas consumer response and the price/demand fixed point.

Each consumer faces its own price lam = lam0 + k * (own demand), so every
(consumer, step) pair is an independent scalar fixed point; everything here is
vectorised over arrays of shape (consumers, steps).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 200
# damping kicks in after this many consecutive residual increases, or after
# this many consecutive iterations contracting slower than SLOW_RATIO
_RISE_PATIENCE = 2
_SLOW_RATIO = 0.5


@dataclass(frozen=True)
class PriceSignal:
    power: np.ndarray  # (consumers, steps) currency/MWh
    heat: np.ndarray


@dataclass(frozen=True)
class DemandProfile:
    power: np.ndarray  # (consumers, steps) MW
    heat: np.ndarray

    @property
    def total_power(self) -> float:
        return float(self.power.sum())

    @property
    def total_heat(self) -> float:
        return float(self.heat.sum())


@dataclass
class EquilibriumOutcome:
    prices: PriceSignal
    demands: DemandProfile
    iterations: int
    residuals: list
    converged: bool
    damped: bool = False
    trace: list = field(default_factory=list)  # (iter, residual, mean_price_p, mean_price_h)
    budget_error: float = 0.0  # max |lam_p l + lam_h h - budget| over all iterates

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "residual", "mean_price_p", "mean_price_h"])
            for it, res, mp, mh in self.trace:
                w.writerow([it, f"{res:.12g}", f"{mp:.12g}", f"{mh:.12g}"])


def tlou_price(tariff, demand: float, t: int, kind: str = "power") -> float:
    if demand < 0:
        raise ValueError("demand must be nonnegative")
    base = tariff.base_power if kind == "power" else tariff.base_heat
    return base[t] + tariff.slope * demand


def optimal_demand(consumer, prices) -> tuple:
    """Budget-exhausting Cobb-Douglas response (l, h) to prices (lam_p, lam_h)."""
    lam_p, lam_h = prices
    if lam_p <= 0 or lam_h <= 0:
        raise ValueError("prices must be strictly positive")
    a, budget = consumer.alpha, consumer.budget
    return a * budget / lam_p, (1 - a) * budget / lam_h


def positive_root(k, lam0, share) -> np.ndarray:
    """Positive root of k x^2 + lam0 x - share = 0, elementwise.

    Written as 2 share / (lam0 + sqrt(lam0^2 + 4 k share)) so k -> 0 is stable.
    """
    k, lam0, share = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (k, lam0, share)))
    if np.any((k <= 0) & (lam0 <= 0)):
        raise ValueError("slope and base price cannot both be zero")
    return 2.0 * share / (lam0 + np.sqrt(lam0 * lam0 + 4.0 * k * share))


def closed_form_equilibrium(consumer, tariff, t: int) -> tuple:
    k = tariff.slope
    l_star = positive_root(k, tariff.base_power[t], consumer.alpha * consumer.budget)
    h_star = positive_root(k, tariff.base_heat[t], (1 - consumer.alpha) * consumer.budget)
    return float(l_star), float(h_star)


def iterate_equilibrium(alpha, budget, base_power, base_heat, slope,
                        eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                        init=None) -> EquilibriumOutcome:
    """Alternate price clearing and demand response until demands settle.

    Arrays broadcast to a common shape. When the residual keeps rising, or the
    map contracts too slowly, prices are averaged with the previous iterate;
    demands are always the exact budget response to the price in force, so
    the budget identity holds at every iterate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    alpha, budget, lp0, lh0, k = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (alpha, budget, base_power, base_heat, slope)))
    if np.any(k < 0):
        raise ValueError("slope must be nonnegative")
    share_p, share_h = alpha * budget, (1 - alpha) * budget
    if init is None:
        l = share_p / np.where(lp0 > 0, lp0, 1.0)
        h = share_h / np.where(lh0 > 0, lh0, 1.0)
    else:
        l, h = (np.broadcast_to(np.asarray(v, dtype=float), alpha.shape).copy() for v in init)

    lam_p = lam_h = None
    damped = False
    residuals, trace = [], []
    rises = slow = 0
    budget_err = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_p, new_h = lp0 + k * l, lh0 + k * h
        if damped and lam_p is not None:
            new_p, new_h = 0.5 * (lam_p + new_p), 0.5 * (lam_h + new_h)
        lam_p, lam_h = new_p, new_h
        if np.any(lam_p <= 0) or np.any(lam_h <= 0):
            raise ValueError("nonpositive price encountered; base prices must be positive when demand can vanish")
        l_new, h_new = share_p / lam_p, share_h / lam_h
        budget_err = max(budget_err, float(np.max(np.abs(lam_p * l_new + lam_h * h_new - budget))))
        res = float(np.linalg.norm(l_new - l) + np.linalg.norm(h_new - h))
        l, h = l_new, h_new
        if residuals:
            ratio = res / residuals[-1] if residuals[-1] > 0 else 0.0
            rises = rises + 1 if ratio > 1 else 0
            slow = slow + 1 if ratio > _SLOW_RATIO else 0
            if not damped and (rises >= _RISE_PATIENCE or slow >= _RISE_PATIENCE):
                damped = True
        residuals.append(res)
        trace.append((it, res, float(lam_p.mean()), float(lam_h.mean())))
        if not math.isfinite(res):
            break
        if res < eps:
            converged = True
            break
    return EquilibriumOutcome(PriceSignal(lam_p, lam_h), DemandProfile(l, h), it, residuals,
                              converged, damped, trace, budget_err)


def fixed_point_equilibrium(case, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                            init=None) -> EquilibriumOutcome:
    cons = case.consumers
    T = case.steps
    alpha = np.array([[c.alpha] * T for c in cons])
    budget = np.array([[c.budget] * T for c in cons])
    lp0 = np.tile(np.asarray(case.tariff.base_power, dtype=float), (len(cons), 1))
    lh0 = np.tile(np.asarray(case.tariff.base_heat, dtype=float), (len(cons), 1))
    return iterate_equilibrium(alpha, budget, lp0, lh0, case.tariff.slope, eps, max_iter, init)


# Cobb-Douglas helpers -----------------------------------------------------

def cobb_douglas(l, h, alpha):
    return l ** alpha * h ** (1 - alpha)


def cobb_douglas_gradient(l, h, alpha):
    return np.array([alpha * l ** (alpha - 1) * h ** (1 - alpha),
                     (1 - alpha) * l ** alpha * h ** (-alpha)])


def cobb_douglas_hessian(l, h, alpha):
    d_ll = alpha * (alpha - 1) * l ** (alpha - 2) * h ** (1 - alpha)
    d_hh = alpha * (alpha - 1) * l ** alpha * h ** (-alpha - 1)
    d_lh = alpha * (1 - alpha) * l ** (alpha - 1) * h ** (-alpha)
    return np.array([[d_ll, d_lh], [d_lh, d_hh]])
