"""Labelled particle configurations on the integer lattice.

A configuration assigns each site a finite set of labels from [0, 1]; label
sets at distinct sites are disjoint and each site's labels are kept strictly
descending.  Only a finite window can be occupied; the window is recorded so
downstream code can flag runs whose front approaches it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError
from .walks import mu_of

__all__ = [
    "Variant",
    "Configuration",
    "ModelParams",
    "AlphaParams",
    "sample_nu",
    "sample_nu_c_plus",
    "phi_theta",
    "config_distance",
    "config_to_text",
    "config_from_text",
]

MAX_REJECTION_ITERS = 100_000


class Variant(str, Enum):
    SINGLE_RATE = "single_rate"
    REMANENT = "remanent"
    FROG = "frog"


@dataclass(frozen=True)
class Configuration:
    """Particle labels per site, empty outside ``window``."""

    sites: Mapping[int, tuple[float, ...]]
    window: tuple[int, int]

    def __post_init__(self):
        cleaned = {}
        seen: set[float] = set()
        lo, hi = self.window
        if lo > hi:
            raise ParameterError(f"empty window {self.window}")
        for x, labels in self.sites.items():
            labels = tuple(labels)
            if not labels:
                continue
            if not (lo <= x <= hi):
                raise ParameterError(f"occupied site {x} outside window {self.window}")
            if any(not (0.0 <= u <= 1.0) for u in labels):
                raise ParameterError("labels must lie in [0, 1]")
            if list(labels) != sorted(labels, reverse=True):
                raise ParameterError(f"labels at site {x} not strictly descending")
            if len(set(labels)) != len(labels) or seen.intersection(labels):
                raise ParameterError("labels must be globally distinct")
            seen.update(labels)
            cleaned[x] = labels
        object.__setattr__(self, "sites", cleaned)

    @property
    def total_count(self) -> int:
        return sum(len(v) for v in self.sites.values())

    def count_at(self, x: int) -> int:
        return len(self.sites.get(x, ()))

    def all_labels(self) -> set[float]:
        out: set[float] = set()
        for labels in self.sites.values():
            out.update(labels)
        return out

    def items(self):
        """(site, labels) pairs, sites ascending."""
        return sorted(self.sites.items())


@dataclass(frozen=True)
class ModelParams:
    """Jump rates and density for one model variant."""

    rho: float
    d_r: float
    d_b: float
    variant: Variant

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.rho <= 0:
            raise ParameterError(f"rho must be > 0, got {self.rho}")
        v = self.variant
        if v is Variant.SINGLE_RATE and not (self.d_r == self.d_b > 0):
            raise ParameterError("single_rate requires d_r == d_b > 0")
        if v is Variant.REMANENT and not (self.d_r >= self.d_b > 0):
            raise ParameterError("remanent requires d_r >= d_b > 0")
        if v is Variant.FROG and not (self.d_b == 0 and self.d_r > 0):
            raise ParameterError("frog requires d_b == 0 and d_r > 0")


@dataclass(frozen=True)
class AlphaParams:
    """Line slope and renewal-detection knobs.

    ``mu = alpha*theta - 2(cosh(theta)-1)`` must be positive, and
    ``alpha < beta``.
    """

    alpha: float
    theta: float
    beta: float
    cap_c: int = 3
    cap_l: int = 5
    mu: float = field(init=False)

    def __post_init__(self):
        if self.alpha <= 0 or self.theta <= 0:
            raise ParameterError("alpha and theta must be > 0")
        if not (self.alpha < self.beta):
            raise ParameterError("need alpha < beta")
        if self.cap_c < 1 or self.cap_l < 1:
            raise ParameterError("cap_c and cap_l must be >= 1")
        mu = mu_of(self.alpha, self.theta)
        if mu <= 0:
            raise ParameterError(
                f"alpha*theta - 2(cosh(theta)-1) = {mu} must be > 0"
            )
        object.__setattr__(self, "mu", mu)


def _draw_labels(k: int, rng: np.random.Generator, taken: set[float]) -> list[float]:
    """k uniform labels, resampling any collision with already-taken values."""
    out: list[float] = []
    while len(out) < k:
        u = float(rng.random())
        if u in taken:
            continue
        taken.add(u)
        out.append(u)
    return out


def sample_nu(
    rho: float, window: tuple[int, int], rng: np.random.Generator
) -> Configuration:
    """Poisson(rho) particle counts per window site, labels i.i.d. uniform."""
    if rho <= 0:
        raise ParameterError(f"rho must be > 0, got {rho}")
    lo, hi = window
    if lo > hi:
        raise ParameterError(f"empty window {window}")
    taken: set[float] = set()
    sites: dict[int, tuple[float, ...]] = {}
    for x in range(lo, hi + 1):
        k = int(rng.poisson(rho))
        if k:
            sites[x] = tuple(sorted(_draw_labels(k, rng, taken), reverse=True))
    return Configuration(sites=sites, window=window)


def sample_nu_c_plus(
    rho: float,
    cap_c: int,
    window: tuple[int, int],
    rng: np.random.Generator,
) -> Configuration:
    """Poisson particles on sites >= 1, Poisson conditioned >= cap_c at the
    origin, nothing below zero.

    Conditioning is by rejection; a hard iteration cap guards against
    cap_c values far in the Poisson tail.
    """
    if rho <= 0:
        raise ParameterError(f"rho must be > 0, got {rho}")
    if cap_c < 1:
        raise ParameterError(f"cap_c must be >= 1, got {cap_c}")
    lo, hi = window
    if lo < 0:
        raise ParameterError("window must lie in [0, inf)")
    if lo > hi:
        raise ParameterError(f"empty window {window}")
    taken: set[float] = set()
    sites: dict[int, tuple[float, ...]] = {}
    for x in range(lo, hi + 1):
        if x == 0:
            for attempt in range(MAX_REJECTION_ITERS):
                k = int(rng.poisson(rho))
                if k >= cap_c:
                    break
            else:
                raise ParameterError(
                    f"rejection sampling failed after {MAX_REJECTION_ITERS} draws: "
                    f"P(Poisson({rho}) >= {cap_c}) too small"
                )
        else:
            k = int(rng.poisson(rho))
        if k:
            sites[x] = tuple(sorted(_draw_labels(k, rng, taken), reverse=True))
    return Configuration(sites=sites, window=window)


def phi_theta(w: Configuration, theta: float) -> float:
    """Exponential norm: sum of ``exp(theta*x)`` over particles at sites
    x <= 0.  Sites right of the origin contribute nothing."""
    if theta <= 0:
        raise ParameterError(f"theta must be > 0, got {theta}")
    return sum(
        len(labels) * math.exp(theta * x)
        for x, labels in w.sites.items()
        if x <= 0
    )


def _site_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-level per-site distance: count gap plus label-wise gaps, the
    shorter sorted tuple zero-padded."""
    p, q = len(a), len(b)
    m = max(p, q)
    total = float(abs(q - p))
    for i in range(m):
        ai = a[i] if i < p else 0.0
        bi = b[i] if i < q else 0.0
        total += abs(bi - ai)
    return total


def config_distance(w1: Configuration, w2: Configuration, theta: float) -> float:
    """Exponentially weighted sum of per-site distances."""
    if theta <= 0:
        raise ParameterError(f"theta must be > 0, got {theta}")
    xs = set(w1.sites) | set(w2.sites)
    return sum(
        _site_distance(w1.sites.get(x, ()), w2.sites.get(x, ()))
        * math.exp(-theta * abs(x))
        for x in xs
    )


# ---------------------------------------------------------------------------
# Line format: "x<TAB>count<TAB>label,label,..." per occupied site, ascending.
# ---------------------------------------------------------------------------


def config_to_text(w: Configuration) -> str:
    lines = [f"# window {w.window[0]} {w.window[1]}"]
    for x, labels in w.items():
        lab = ",".join(f"{u:.17g}" for u in labels)
        lines.append(f"{x}\t{len(labels)}\t{lab}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> Configuration:
    window = None
    sites: dict[int, tuple[float, ...]] = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            parts = ln[1:].split()
            if parts and parts[0] == "window":
                window = (int(parts[1]), int(parts[2]))
            continue
        x_s, count_s, lab_s = ln.split("\t")
        labels = tuple(float(v) for v in lab_s.split(",")) if lab_s else ()
        if len(labels) != int(count_s):
            raise ParameterError(f"count mismatch at site {x_s}")
        sites[int(x_s)] = labels
    if window is None:
        occupied = sorted(sites)
        window = (occupied[0], occupied[-1]) if occupied else (0, 0)
    return Configuration(sites=sites, window=window)
