"""Deterministic expectations over priors and Gaussian noise.

The state-evolution and replica integrands all have the form
E_{x ~ P0, z ~ N(0,1)} f(x, b) with b = lam * x + sqrt(gamma) * z, and in
every case f is a polynomial of degree <= 2 in x whose coefficients depend
on b only (squared error, overlap, posterior variance, log-partition).  That
lets Gaussian prior components be integrated exactly in x: conditioned on b
they are Gaussian, so only a 1-D Gaussian integral over b remains.

Denoisers of sparse or discrete priors switch sharply between regimes at
known values of b (the switch narrows as lam grows), which defeats plain
Gauss-Hermite.  The 1-D integrals therefore use composite Gauss-Legendre
panels on the standardised variable, refined geometrically around those
switching points.  The half-normal component uses the positive half of the
same panels in x, tensored with the panels in z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .denoisers import PriorSpec

DEFAULT_ORDER = 61
DEFAULT_PANEL_ORDER = 16
Z_MAX = 12.0


@lru_cache(maxsize=16)
def _hermite(order):
    z, w = hermegauss(order)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=16)
def _legendre(order):
    return leggauss(order)


def normal_panels(features=(), panel_order=DEFAULT_PANEL_ORDER, zmax=Z_MAX):
    """Nodes and weights for E f(Z), Z ~ N(0, 1), on [-zmax, zmax].

    ``features`` lists (center, width) pairs in z where f changes quickly;
    panel edges are packed geometrically around each center.
    """
    edges = [np.arange(-zmax, zmax + 0.5, 1.0)]
    for c, w in features:
        if not (np.isfinite(c) and np.isfinite(w)) or abs(c) > zmax + 1.0 or w > 2.0:
            continue
        w = max(float(w), 1e-14)
        d = w * 2.0 ** np.arange(-3, 60)
        d = d[d < 2.0]
        edges.append(np.concatenate([[c], c - d, c + d]))
    e = np.unique(np.clip(np.concatenate(edges), -zmax, zmax))
    x, wl = _legendre(panel_order)
    half = 0.5 * np.diff(e)
    mid = 0.5 * (e[1:] + e[:-1])
    z = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    w = (half[:, None] * wl[None, :]).ravel() * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return z, w


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature settings.

    ``nodes``/``weights`` are a Gauss-Hermite rule of size ``order`` for
    smooth integrands; ``panel_order`` sets the Gauss-Legendre order of the
    composite rule used where the integrand has sharp features.
    """

    order: int = DEFAULT_ORDER
    panel_order: int = DEFAULT_PANEL_ORDER
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z, w = _hermite(self.order)
        object.__setattr__(self, "nodes", z)
        object.__setattr__(self, "weights", w)

    def expect(self, f, mean=0.0, var=1.0):
        """E f(X) for X ~ N(mean, var); ``f`` must be vectorised."""
        return float(np.dot(self.weights, f(mean + np.sqrt(var) * self.nodes)))

    def panels(self, features=()):
        return normal_panels(features, self.panel_order)


def prior_components(prior: PriorSpec):
    """Decompose P0 into weighted atoms, Gaussians and half-normals."""
    if prior.kind == "gauss_bernoulli":
        comps = [("gauss", prior.rho, 0.0, 1.0)]
        if prior.rho < 1.0:
            comps.insert(0, ("atom", 1.0 - prior.rho, 0.0))
        return comps
    if prior.kind == "rademacher":
        return [("atom", 0.5, 1.0), ("atom", 0.5, -1.0)]
    if prior.kind == "gaussian":
        return [("gauss", 1.0, prior.mean, prior.variance)]
    return [("halfnormal", 1.0, prior.variance)]


def denoiser_switch_points(prior: PriorSpec, lam):
    """(center, width) pairs in b where the denoiser at precision ``lam`` switches regime."""
    if prior.kind == "rademacher":
        return [(0.0, 1.0)]
    if prior.kind == "gauss_bernoulli" and prior.rho < 1.0 and lam > 0:
        # log-odds of slab vs spike: log(rho/(1-rho)) - log(1+lam)/2 + b^2 / (2 (1+lam))
        level = 0.5 * np.log1p(lam) - np.log(prior.rho / (1.0 - prior.rho))
        if level > 0:
            b = np.sqrt(2.0 * (1.0 + lam) * level)
            w = (1.0 + lam) / b
            return [(b, w), (-b, w)]
        return [(0.0, np.sqrt(1.0 + lam))]
    return []


def _z_features(switch, shift, scale):
    return [((c - shift) / scale, w / scale) for c, w in switch]


def prior_expectation(prior: PriorSpec, lam, gamma, fn, rule: QuadratureRule | None = None):
    """E_{x, z} [c0(b) + c1(b) x + c2(b) x^2] with b = lam x + sqrt(gamma) z.

    ``fn(b)`` returns the tuple ``(c0, c1, c2)`` (entries may be scalars).
    Coefficients may carry extra leading axes, in which case an array of
    expectations is returned.
    """
    rule = rule or QuadratureRule()
    sg = np.sqrt(max(gamma, 0.0))
    switch = denoiser_switch_points(prior, lam)
    total = 0.0

    def integrate(vals, w):
        vals = np.broadcast_to(vals, np.broadcast_shapes(np.shape(vals), w.shape))
        return vals @ w

    for comp in prior_components(prior):
        kind, weight = comp[0], comp[1]
        if kind == "atom":
            a = comp[2]
            if sg > 0:
                z, w = rule.panels(_z_features(switch, lam * a, sg))
            else:
                z, w = np.zeros(1), np.ones(1)
            b = lam * a + sg * z
            c0, c1, c2 = fn(b)
            total = total + weight * integrate(c0 + c1 * a + c2 * a * a, w)
        elif kind == "gauss":
            mu, s = comp[2], comp[3]
            vb = lam * lam * s + gamma
            if vb > 0:
                sb = np.sqrt(vb)
                z, w = rule.panels(_z_features(switch, lam * mu, sb))
                b = lam * mu + sb * z
                cond_mean = mu + lam * s * (b - lam * mu) / vb
                cond_var = s * gamma / vb
            else:
                b = np.full(1, lam * mu)
                w = np.ones(1)
                cond_mean = np.full(1, mu)
                cond_var = s
            c0, c1, c2 = fn(b)
            total = total + weight * integrate(c0 + c1 * cond_mean + c2 * (cond_var + cond_mean**2), w)
        else:
            # panel edges include 0, so the positive half is an exact split
            zx, wz = rule.panels()
            keep = zx > 0
            xs, wx = np.sqrt(comp[2]) * zx[keep], 2.0 * wz[keep]
            z, w = rule.panels() if sg > 0 else (np.zeros(1), np.ones(1))
            b = lam * xs[:, None] + sg * z[None, :]
            c0, c1, c2 = fn(b)
            X = xs[:, None]
            vals = c0 + c1 * X + c2 * X * X
            vals = np.broadcast_to(vals, np.broadcast_shapes(np.shape(vals), b.shape))
            total = total + weight * np.einsum("...ij,i,j->...", vals, wx, w)
    return float(total) if np.ndim(total) == 0 else np.asarray(total)
