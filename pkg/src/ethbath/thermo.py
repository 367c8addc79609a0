"""Thermodynamics from the spectrum: density of states, entropy fit, temperature.

The chain of definitions: Omega(E)*dE from histogramming the spectrum,
S(E) = log(Omega(E) dE), beta = dS/dE, C = -beta^-2 (dbeta/dE)^-1. The
canonical solve <H>_beta = E is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectra import EigenSystem


class FitDomainError(ValueError):
    """Requested energy lies outside the fitted domain."""


@dataclass(frozen=True)
class DensityOfStates:
    centers: np.ndarray
    counts: np.ndarray
    bin_width: float


@dataclass(frozen=True)
class EntropyFit:
    """Polynomial fit of S(E) = log(Omega(E) dE) over [e_lo, e_hi]."""

    poly: np.polynomial.Polynomial = field(repr=False)
    degree: int
    e_lo: float
    e_hi: float
    max_residual: float

    def _check(self, E: float) -> None:
        if not (self.e_lo <= E <= self.e_hi):
            raise FitDomainError(
                f"E={E} outside entropy-fit domain [{self.e_lo}, {self.e_hi}]"
            )

    def entropy(self, E: float) -> float:
        self._check(E)
        return float(self.poly(E))


def _as_eigenvalues(eig: EigenSystem | np.ndarray) -> np.ndarray:
    return eig.eigenvalues if isinstance(eig, EigenSystem) else np.asarray(eig, float)


def default_bin_width(eigenvalues: np.ndarray) -> float:
    e = np.sort(_as_eigenvalues(eigenvalues))
    bandwidth = e[-1] - e[0]
    mean_spacing = bandwidth / (e.size - 1)
    # aim for ~20 states per bin, but never more than a tenth of the bandwidth
    return min(max(bandwidth / 100.0, 20.0 * mean_spacing), 0.1 * bandwidth)


def density_of_states(
    eig: EigenSystem | np.ndarray, bin_width: float | None = None
) -> DensityOfStates:
    e = np.sort(_as_eigenvalues(eig))
    bandwidth = float(e[-1] - e[0])
    if bandwidth <= 0:
        raise ValueError("degenerate spectrum has no bandwidth")
    mean_spacing = bandwidth / (e.size - 1)
    if bin_width is None:
        bin_width = default_bin_width(e)
    if bin_width <= mean_spacing:
        raise ValueError(
            f"bin width {bin_width} must exceed the mean level spacing {mean_spacing:.3g}"
        )
    if bin_width > 0.1 * bandwidth:
        raise ValueError(
            f"bin width {bin_width} exceeds 10% of the bandwidth {bandwidth:.3g}"
        )
    n_bins = int(np.ceil(bandwidth / bin_width))
    edges = e[0] + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(e, bins=edges)
    # top edge is exclusive in histogram except the last bin, which is fine here
    centers = edges[:-1] + bin_width / 2.0
    return DensityOfStates(centers=centers, counts=counts.astype(float), bin_width=bin_width)


def entropy_fit(dos: DensityOfStates, degree: int = 2, min_count: int = 10) -> EntropyFit:
    if degree < 2:
        raise ValueError("fit degree must be >= 2")
    # bins with only a handful of states carry O(1) Poisson noise in log-counts
    # and would drag the quadratic fit toward the spectral edges
    mask = dos.counts >= min_count
    if int(mask.sum()) < degree + 2:  # small spectra: accept the noisy tails
        mask = dos.counts > 0
    if int(mask.sum()) < degree + 2:
        raise ValueError(
            f"underdetermined fit: {int(mask.sum())} nonempty bins for degree {degree}"
        )
    x = dos.centers[mask]
    y = np.log(dos.counts[mask])
    poly = np.polynomial.Polynomial.fit(x, y, degree).convert()
    residual = float(np.max(np.abs(poly(x) - y)))
    return EntropyFit(
        poly=poly, degree=degree, e_lo=float(x[0]), e_hi=float(x[-1]), max_residual=residual
    )


def inverse_temperature(fit: EntropyFit, E: float) -> float:
    fit._check(E)
    return float(fit.poly.deriv()(E))


def heat_capacity(fit: EntropyFit, E: float) -> float:
    fit._check(E)
    beta = inverse_temperature(fit, E)
    dbeta = float(fit.poly.deriv(2)(E))
    if beta == 0.0:
        return float("inf")
    if dbeta == 0.0:
        raise ValueError("dbeta/dE = 0: heat capacity undefined at this energy")
    # C = dE/dT = -beta^2 (dbeta/dE)^{-1}; sigma^2 beta^2 for a Gaussian DOS
    return -(beta**2) / dbeta


def energy_at_beta(fit: EntropyFit, beta: float) -> float:
    """Invert beta(E) = S'(E) over the fit domain by bisection."""
    lo, hi = fit.e_lo, fit.e_hi
    f = lambda E: inverse_temperature(fit, E) - beta
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise FitDomainError(f"beta={beta} not attained inside the fit domain")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def canonical_mean_energy(eigenvalues: np.ndarray, beta: float) -> float:
    e = np.asarray(eigenvalues, float)
    w = np.exp(-beta * (e - e.min() if beta >= 0 else e - e.max()))
    return float(np.sum(e * w) / np.sum(w))


def canonical_inverse_temperature(
    eig: EigenSystem | np.ndarray, e_target: float, beta_max: float | None = None
) -> float:
    """Solve <H>_beta = e_target by bisection; <H>_beta is decreasing in beta."""
    e = np.sort(_as_eigenvalues(eig))
    if not (e[0] < e_target < e[-1]):
        raise ValueError(
            f"target {e_target} outside the open spectral interval ({e[0]}, {e[-1]})"
        )
    bandwidth = float(e[-1] - e[0])
    if beta_max is None:
        beta_max = 50.0 / bandwidth
    lo, hi = -beta_max, beta_max
    if not (canonical_mean_energy(e, hi) <= e_target <= canonical_mean_energy(e, lo)):
        raise ValueError(
            f"target {e_target} not bracketed within beta in [{lo}, {hi}]"
        )
    tol = 1e-8 * bandwidth
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        em = canonical_mean_energy(e, mid)
        if abs(em - e_target) < tol:
            return mid
        if em > e_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
