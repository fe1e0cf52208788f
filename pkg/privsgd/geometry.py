"""Feasible sets, mirror-map potentials and the mirror-descent step.

Only the Euclidean potential Φ = ½‖·‖² is provided; its Bregman projection
is the Euclidean projection, so no iterative projection solver is needed.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Iterable, Tuple

import numpy as np

from privsgd.config import SET_TOL
from privsgd.errors import ConfigurationError

Pair = Tuple[np.ndarray, np.ndarray]


def as_vector(x, dimension: int = None, name: str = "point") -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if dimension is not None and v.shape[0] != dimension:
        raise ConfigurationError(
            f"{name} has dimension {v.shape[0]}, expected {dimension}", field=name
        )
    return v


def dual_norm(v) -> float:
    """ℓ2 is self-dual: max over the unit ball of ⟨v, w⟩ is ‖v‖₂."""
    return float(np.linalg.norm(np.asarray(v, dtype=float)))


# ---- Feasible sets ----

class FeasibleSet(ABC):
    dimension: int

    @abstractmethod
    def project(self, point: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def diameter(self) -> float:
        ...

    @abstractmethod
    def max_norm(self) -> float:
        """Largest ‖w‖ over the set."""

    def contains(self, point, tol: float = SET_TOL) -> bool:
        p = as_vector(point, self.dimension)
        return bool(np.linalg.norm(self.project(p) - p) <= tol)

    @abstractmethod
    def describe(self) -> dict:
        """JSON-ready description written into result files."""


@dataclass(frozen=True, eq=False)
class L2Ball(FeasibleSet):
    radius: float
    center: np.ndarray = field(default=None)
    dimension: int = 0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ConfigurationError("L2Ball radius must be positive", field="radius")
        if self.center is None:
            if self.dimension < 1:
                raise ConfigurationError("L2Ball needs a center or a dimension", field="dimension")
            center = np.zeros(self.dimension)
        else:
            center = as_vector(self.center, name="center")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dimension", int(center.shape[0]))

    def project(self, point) -> np.ndarray:
        p = as_vector(point, self.dimension)
        offset = p - self.center
        dist = np.linalg.norm(offset)
        if dist <= self.radius:
            return p.copy()
        return self.center + offset * (self.radius / dist)

    def diameter(self) -> float:
        return 2.0 * self.radius

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def describe(self) -> dict:
        return {"kind": "l2ball", "radius": self.radius, "center": self.center.tolist()}


@dataclass(frozen=True, eq=False)
class Box(FeasibleSet):
    lower: np.ndarray
    upper: np.ndarray
    dimension: int = 0

    def __post_init__(self) -> None:
        lo = as_vector(self.lower, name="lower")
        hi = as_vector(self.upper, lo.shape[0], name="upper")
        if np.any(hi <= lo):
            raise ConfigurationError("Box needs upper > lower in every coordinate", field="upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "dimension", int(lo.shape[0]))

    def project(self, point) -> np.ndarray:
        return np.clip(as_vector(point, self.dimension), self.lower, self.upper)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def max_norm(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def describe(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def project(feasible_set: FeasibleSet, point) -> np.ndarray:
    """Euclidean-nearest point of the set."""
    return feasible_set.project(as_vector(point, feasible_set.dimension))


# ---- Potentials ----

class Potential(ABC):
    dimension: int
    strong_convexity: float

    @abstractmethod
    def value(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def conjugate(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def conjugate_grad(self, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def bregman_project(self, feasible_set: FeasibleSet, point: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True, eq=False)
class EuclideanPotential(Potential):
    dimension: int
    strong_convexity: float = 1.0

    def value(self, x) -> float:
        x = as_vector(x, self.dimension)
        return 0.5 * float(x @ x)

    def grad(self, x) -> np.ndarray:
        return as_vector(x, self.dimension).copy()

    def conjugate(self, theta) -> float:
        theta = as_vector(theta, self.dimension)
        return 0.5 * float(theta @ theta)

    def conjugate_grad(self, theta) -> np.ndarray:
        return as_vector(theta, self.dimension).copy()

    def bregman_project(self, feasible_set, point) -> np.ndarray:
        # D_Φ for Φ = ½‖·‖² is ½‖x−y‖², so the Bregman projection is the Euclidean one
        return feasible_set.project(point)


def _check_dims(potential: Potential, *vectors) -> Tuple[np.ndarray, ...]:
    return tuple(as_vector(v, potential.dimension) for v in vectors)


def bregman(potential: Potential, x, y) -> float:
    """D_Φ(x‖y) = Φ(x) − Φ(y) − ⟨∇Φ(y), x − y⟩."""
    x, y = _check_dims(potential, x, y)
    return max(0.0, potential.value(x) - potential.value(y) - float(potential.grad(y) @ (x - y)))


def conjugate_bregman(potential: Potential, x, y) -> float:
    """D_{Φ*}(x‖y) on dual points."""
    x, y = _check_dims(potential, x, y)
    return max(
        0.0,
        potential.conjugate(x) - potential.conjugate(y) - float(potential.conjugate_grad(y) @ (x - y)),
    )


def mirror_step(potential: Potential, feasible_set: FeasibleSet, w, g, eta: float) -> np.ndarray:
    """w̃ = ∇Φ*(∇Φ(w) − η g), followed by the Bregman projection onto the set."""
    if feasible_set.dimension != potential.dimension:
        raise ConfigurationError("potential and feasible set dimensions differ", field="dimension")
    if not eta > 0:
        raise ConfigurationError("step size must be positive", field="eta")
    w, g = _check_dims(potential, w, g)
    w_tilde = potential.conjugate_grad(potential.grad(w) - eta * g)
    return potential.bregman_project(feasible_set, w_tilde)


# ---- Validation predicates (checked on sampled pairs) ----

def is_lipschitz(f: Callable[[np.ndarray], float], pairs: Iterable[Pair], L: float,
                 tol: float = 1e-9) -> bool:
    return all(abs(f(a) - f(b)) <= L * dual_norm(a - b) + tol for a, b in pairs)


def is_smooth(grad: Callable[[np.ndarray], np.ndarray], pairs: Iterable[Pair], beta: float,
              tol: float = 1e-9) -> bool:
    return all(dual_norm(grad(a) - grad(b)) <= beta * dual_norm(a - b) + tol for a, b in pairs)


def is_strongly_convex(f: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray],
                       pairs: Iterable[Pair], alpha: float, tol: float = 1e-9) -> bool:
    return all(
        f(a) >= f(b) + float(grad(b) @ (a - b)) + 0.5 * alpha * float((a - b) @ (a - b)) - tol
        for a, b in pairs
    )
