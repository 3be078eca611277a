"""Independent numerical oracles used to cross-check the simulators."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import integrate, special

from rsalab.fields import Region, SpaceTimePoint
from rsalab.packing import backward_cone, brute_force_sigma

log = logging.getLogger(__name__)


def _ein(u: float) -> float:
    """Entire exponential integral ``int_0^u (1 - e^-v) / v dv``."""
    if u < 1.0:
        total, term, k = 0.0, 1.0, 1
        while True:
            term *= -u / k if k > 1 else u
            piece = term / k if k > 1 else u
            total += piece
            if abs(piece) < 1e-17 * max(1.0, abs(total)):
                return total
            k += 1
    return float(np.euler_gamma + math.log(u) + special.exp1(u))


def renyi_available_fraction(s: float) -> float:
    """Probability that a unit rod can be inserted at dimensionless time ``s``."""
    return math.exp(-2.0 * _ein(s)) if s > 0 else 1.0


def renyi_coverage(s: float, rtol: float = 1e-10) -> float:
    """Covered fraction of the line at dimensionless time ``s`` (unit rods, unit rate)."""
    if s <= 0:
        return 0.0
    # geometric segments keep the 1/s^2 tail well resolved for large s
    edges = [0.0, min(s, 1.0)]
    while edges[-1] < s:
        edges.append(min(s, 2.0 * edges[-1]))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, err = integrate.quad(renyi_available_fraction, a, b, epsrel=rtol, epsabs=0.0,
                                    limit=200)
        if err > 1e-8 * max(value, 1e-300):
            raise ArithmeticError(f"Renyi quadrature did not converge on [{a}, {b}]")
        total += value
    return total


def renyi_density_oracle(tau: float) -> float:
    """Accepted centres per unit length for diameter-2 balls with unit space-time
    intensity on ``R x [0, tau]``: rescaling length by 2 doubles time, so the
    density is half the unit-rod coverage at time ``2 tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return 0.5 * renyi_coverage(2.0 * tau)


def renyi_insertion_probability(t: float) -> float:
    """d=1 probability that a test ball arriving at time ``t`` is accepted."""
    return renyi_available_fraction(2.0 * t)


def brute_force_sigma_oracle(box_halfwidth: float, margin: float, test_point: SpaceTimePoint,
                             seed: int, fld_spec=None) -> int:
    """Pack the whole padded box around ``test_point`` and read its flag."""
    from rsalab.fields import FieldSpec

    spec = fld_spec or FieldSpec(dimension=len(test_point.x))
    return brute_force_sigma(test_point, spec.make(seed), box_halfwidth, margin)


def brute_force_cone_escapes(box_halfwidth: float, margin: float, test_point: SpaceTimePoint,
                             seed: int, fld_spec=None) -> bool:
    """Whether the backward cone of ``test_point`` within the padded box comes within
    interaction range of its edge, so that the padded packing may differ from the
    infinite one. Such events are logged."""
    from rsalab.fields import FieldSpec, sample_window

    spec = fld_spec or FieldSpec(dimension=len(test_point.x))
    reach = box_halfwidth + margin
    xw = np.asarray(test_point.x, dtype=float)
    pts = sample_window(spec.make(seed), Region.box(xw - reach, xw + reach))
    cone = backward_cone(test_point, pts)
    escaped = any(np.max(np.abs(np.asarray(p.x) - xw)) > reach - 2.0 for p in cone.members)
    if escaped:
        log.warning("cone exceeds margin: seed=%d point=%s reach=%g", seed, test_point, reach)
    return escaped


__all__ = [
    "Region",
    "brute_force_cone_escapes",
    "brute_force_sigma_oracle",
    "renyi_coverage",
    "renyi_density_oracle",
    "renyi_insertion_probability",
]
