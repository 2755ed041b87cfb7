"""Damage probability curves and report assembly.

The probability that a substructure lost more than a fraction ``f`` of its
calibration stiffness follows from the two independent Gaussian posteriors
(calibration and monitoring) in closed form:

    P(theta_d < (1 - f) theta_u)
        = CDF( ((1 - f) mu_u - mu_d) / sqrt((1 - f)^2 sigma_u^2 + sigma_d^2) )

The variance pairing above is the one consistent with the defining
probability integral (validated against Monte Carlo); a published variant
swaps the roles of the two variances and is available behind
``swap_variances=True`` for comparison purposes only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .solver import CalibrationResult, MonitoringResult

DEFAULT_GRID_STOP = 0.9
DEFAULT_GRID_STEP = 0.005


def damage_probability(
    mu_u: float,
    sigma_u: float,
    mu_d: float,
    sigma_d: float,
    f: float,
    swap_variances: bool = False,
) -> float:
    """Probability that stiffness dropped by more than fraction ``f``.

    Degenerate case: with both standard deviations zero the probability is
    the indicator of ``(1 - f) mu_u > mu_d`` (0.5 at equality).
    """
    if not 0.0 <= f < 1.0:
        raise ValueError(f"f must lie in [0, 1), got {f}")
    if sigma_u < 0 or sigma_d < 0:
        raise ValueError("standard deviations must be nonnegative")
    scale = 1.0 - f
    gap = scale * mu_u - mu_d
    if swap_variances:
        var = scale**2 * sigma_d**2 + sigma_u**2
    else:
        var = scale**2 * sigma_u**2 + sigma_d**2
    if var == 0.0:
        return 0.5 if gap == 0.0 else (1.0 if gap > 0 else 0.0)
    return float(norm.cdf(gap / np.sqrt(var)))


@dataclass(frozen=True)
class DamageCurve:
    """Damage probability as a function of the loss fraction f."""

    substructure: str
    f_grid: np.ndarray
    p_dam: np.ndarray

    def __post_init__(self):
        f_grid = np.asarray(self.f_grid, dtype=float)
        p_dam = np.asarray(self.p_dam, dtype=float)
        if f_grid.shape != p_dam.shape or f_grid.ndim != 1:
            raise ValueError("f_grid and p_dam must be matching vectors")
        if np.any(np.diff(f_grid) <= 0):
            raise ValueError("f_grid must be strictly increasing")
        if np.any((p_dam < 0) | (p_dam > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        f_grid.setflags(write=False)
        p_dam.setflags(write=False)
        object.__setattr__(self, "f_grid", f_grid)
        object.__setattr__(self, "p_dam", p_dam)

    def median_loss(self) -> float:
        """Loss fraction at which the curve crosses probability 0.5
        (linear interpolation; 0.0 / the grid end when it never crosses)."""
        p = self.p_dam
        if p[0] <= 0.5:
            return 0.0
        below = np.flatnonzero(p <= 0.5)
        if below.size == 0:
            return float(self.f_grid[-1])
        k = below[0]
        f0, f1 = self.f_grid[k - 1], self.f_grid[k]
        p0, p1 = p[k - 1], p[k]
        if p0 == p1:
            return float(f0)
        return float(f0 + (p0 - 0.5) * (f1 - f0) / (p0 - p1))


def default_f_grid(
    stop: float = DEFAULT_GRID_STOP, step: float = DEFAULT_GRID_STEP
) -> np.ndarray:
    if not 0.0 < stop < 1.0 or step <= 0:
        raise ValueError("grid must lie within [0, 1) with a positive step")
    n = int(round(stop / step))
    return np.linspace(0.0, n * step, n + 1)


def damage_curve(
    mu_u: float,
    sigma_u: float,
    mu_d: float,
    sigma_d: float,
    f_grid: np.ndarray | None = None,
    substructure: str = "",
    swap_variances: bool = False,
) -> DamageCurve:
    """Evaluate :func:`damage_probability` over a grid of loss fractions."""
    grid = default_f_grid() if f_grid is None else np.asarray(f_grid, dtype=float)
    p = np.array(
        [
            damage_probability(mu_u, sigma_u, mu_d, sigma_d, f, swap_variances)
            for f in grid
        ]
    )
    return DamageCurve(substructure=substructure, f_grid=grid, p_dam=p)


@dataclass(frozen=True)
class SubstructureRecord:
    label: str
    theta_u: float
    cov_u_percent: float
    theta_d: float
    ratio: float
    cov_d_percent: float
    pruned: bool
    damage_flag: bool


@dataclass(frozen=True)
class DamageReport:
    """Per-substructure summary of a calibration/monitoring pair."""

    records: tuple[SubstructureRecord, ...]
    curves: tuple[DamageCurve, ...]
    metadata: dict = field(default_factory=dict)

    def flagged(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.records if r.damage_flag)


def build_report(
    calibration: CalibrationResult,
    monitoring: MonitoringResult,
    curves: tuple[DamageCurve, ...] | None = None,
    labels=None,
    metadata: dict | None = None,
    swap_variances: bool = False,
) -> DamageReport:
    """Assemble the per-substructure damage report.

    The coefficient of variation is 100 * sqrt(posterior variance) divided
    by the posterior mean; pruned substructures report a ratio of exactly 1
    and a c.o.v. of exactly 0. A substructure is flagged when its ratio
    dropped below 1.
    """
    n = calibration.theta_u_hat.shape[0]
    if monitoring.theta_d.shape[0] != n:
        raise ValueError("calibration and monitoring sizes do not match")
    if labels is None:
        labels = tuple(str(j + 1) for j in range(n))
    labels = tuple(labels)
    if len(labels) != n:
        raise ValueError(f"expected {n} labels, got {len(labels)}")
    if curves is None:
        sd_u = np.sqrt(np.diag(calibration.sigma_u))
        sd_d = np.sqrt(np.diag(monitoring.sigma_d))
        curves = tuple(
            damage_curve(
                calibration.theta_u_hat[j],
                sd_u[j],
                monitoring.theta_d[j],
                sd_d[j],
                substructure=labels[j],
                swap_variances=swap_variances,
            )
            for j in range(n)
        )
    if len(curves) != n:
        raise ValueError(f"expected {n} curves, got {len(curves)}")

    cov_u = calibration.cov_percent
    pruned = set(monitoring.pruned)
    records = tuple(
        SubstructureRecord(
            label=labels[j],
            theta_u=float(calibration.theta_u_hat[j]),
            cov_u_percent=float(cov_u[j]),
            theta_d=float(monitoring.theta_d[j]),
            ratio=float(monitoring.stiffness_ratio[j]),
            cov_d_percent=float(monitoring.cov_percent[j]),
            pruned=j in pruned,
            damage_flag=bool(monitoring.stiffness_ratio[j] < 1.0),
        )
        for j in range(n)
    )
    return DamageReport(records=records, curves=tuple(curves), metadata=metadata or {})


def render_report_text(report: DamageReport) -> str:
    """Aligned-text table: one row per substructure."""
    header = (
        f"{'substructure':<14}{'theta_u':>10}{'cov_u%':>9}"
        f"{'ratio':>9}{'cov_d%':>9}  flag"
    )
    lines = [header, "-" * len(header)]
    for r in report.records:
        flag = "DAMAGE" if r.damage_flag else ""
        lines.append(
            f"{r.label:<14}{r.theta_u:>10.3f}{r.cov_u_percent:>9.3f}"
            f"{r.ratio:>9.3f}{r.cov_d_percent:>9.3f}  {flag}"
        )
    return "\n".join(lines) + "\n"


def report_to_dict(report: DamageReport) -> dict:
    return {
        "substructures": [
            {
                "label": r.label,
                "theta_u": r.theta_u,
                "cov_u_percent": r.cov_u_percent,
                "theta_d": r.theta_d,
                "ratio": r.ratio,
                "cov_d_percent": r.cov_d_percent,
                "pruned": r.pruned,
                "damage_flag": r.damage_flag,
            }
            for r in report.records
        ],
        "metadata": report.metadata,
    }


def write_report(report: DamageReport, json_path, text_path) -> None:
    with open(json_path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1)
        fh.write("\n")
    with open(text_path, "w") as fh:
        fh.write(render_report_text(report))


def write_curves_csv(curves, path) -> None:
    """CSV with one row per grid point per substructure."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["substructure", "f", "p_dam"])
        for curve in curves:
            for f, p in zip(curve.f_grid, curve.p_dam):
                writer.writerow([curve.substructure, repr(float(f)), repr(float(p))])
