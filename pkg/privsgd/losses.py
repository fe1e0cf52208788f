"""Convex loss oracles f(w, x) and synthetic populations.

Losses are evaluated row-wise on stacked arrays (`loss_rows`,
`subgradient_rows`); the single-point operations delegate to them.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from privsgd.config import SET_TOL
from privsgd.errors import ConfigurationError
from privsgd.geometry import FeasibleSet, as_vector

logger = logging.getLogger(__name__)


class LossKind(str, Enum):
    HINGE = "hinge"
    ABSOLUTE = "absolute"
    SQUARED = "squared"


@dataclass(frozen=True, eq=False)
class DataPoint:
    features: np.ndarray
    label: float


@dataclass(frozen=True)
class LossOracle:
    kind: LossKind
    lipschitz_L: float
    smooth: bool = False
    # bounds the certificate was issued for; None leaves that side unchecked
    feature_bound: Optional[float] = None
    label_bound: Optional[float] = None


# ---- Loss evaluation ----

def _rows(W, X, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if W.shape[1] != X.shape[1]:
        raise ConfigurationError(
            f"w has dimension {W.shape[1]}, features have {X.shape[1]}", field="dimension"
        )
    return W, X, y


def loss_rows(oracle: LossOracle, W, X, y) -> np.ndarray:
    """f(w_i, x_i) for every row; W may be a single row broadcast over X."""
    W, X, y = _rows(W, X, y)
    pred = np.einsum("ij,ij->i", np.broadcast_to(W, X.shape), X)
    if oracle.kind is LossKind.HINGE:
        return np.maximum(0.0, 1.0 - y * pred)
    if oracle.kind is LossKind.ABSOLUTE:
        return np.abs(pred - y)
    return 0.5 * (pred - y) ** 2


def subgradient_rows(oracle: LossOracle, W, X, y) -> np.ndarray:
    W, X, y = _rows(W, X, y)
    pred = np.einsum("ij,ij->i", np.broadcast_to(W, X.shape), X)
    if oracle.kind is LossKind.HINGE:
        # at margin exactly 1 the extreme subgradient −y·x is returned
        active = (y * pred <= 1.0).astype(float)
        coef = -y * active
    elif oracle.kind is LossKind.ABSOLUTE:
        coef = np.sign(pred - y)
    else:
        coef = pred - y
    return coef[:, None] * X


def loss_value(oracle: LossOracle, w, x: DataPoint) -> float:
    return float(loss_rows(oracle, w, x.features, [x.label])[0])


def subgradient(oracle: LossOracle, w, x: DataPoint) -> np.ndarray:
    return subgradient_rows(oracle, w, x.features, [x.label])[0]


# ---- Lipschitz certificates ----

def lipschitz_certificate(kind: Union[LossKind, str], feature_bound: float,
                          feasible_set: Optional[FeasibleSet] = None,
                          label_bound: float = 1.0) -> float:
    """Bound on ‖∇f(w, x)‖ over ‖x‖ ≤ feature_bound.

    The squared loss has no global constant; its bound holds on
    `feasible_set` only: B·(max‖w‖·B + label_bound).
    """
    kind = LossKind(kind)
    if not feature_bound > 0:
        raise ConfigurationError("feature_bound must be positive", field="feature_bound")
    if kind in (LossKind.HINGE, LossKind.ABSOLUTE):
        return float(feature_bound)
    if feasible_set is None:
        raise ConfigurationError(
            "squared loss has no global Lipschitz constant; a bounded feasible set is required",
            field="set",
        )
    return float(feature_bound * (feasible_set.max_norm() * feature_bound + label_bound))


def make_oracle(kind: Union[LossKind, str], feature_bound: float,
                feasible_set: Optional[FeasibleSet] = None, label_bound: float = 1.0) -> LossOracle:
    kind = LossKind(kind)
    L = lipschitz_certificate(kind, feature_bound, feasible_set, label_bound)
    return LossOracle(kind=kind, lipschitz_L=L, smooth=kind is LossKind.SQUARED,
                      feature_bound=float(feature_bound),
                      label_bound=float(label_bound) if kind is LossKind.SQUARED else None)


def check_dataset(oracle: LossOracle, X: np.ndarray, y: np.ndarray) -> None:
    """Reject rows the oracle's Lipschitz certificate does not cover."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if oracle.feature_bound is not None and X.size:
        norms = np.linalg.norm(X, axis=1)
        worst = int(np.argmax(norms))
        if norms[worst] > oracle.feature_bound + SET_TOL:
            raise ConfigurationError(
                f"row {worst} has ‖x‖={norms[worst]:.6g} > feature_bound={oracle.feature_bound:g}",
                field="features",
            )
    if oracle.kind is LossKind.HINGE and not np.all(np.abs(y) == 1.0):
        bad = int(np.flatnonzero(np.abs(y) != 1.0)[0])
        raise ConfigurationError(f"hinge loss needs labels in {{-1, +1}}; row {bad} has {y[bad]:g}",
                                 field="labels")
    if oracle.label_bound is not None and y.size and np.max(np.abs(y)) > oracle.label_bound + SET_TOL:
        raise ConfigurationError(
            f"label magnitude {np.max(np.abs(y)):.6g} exceeds label_bound={oracle.label_bound:g}",
            field="labels",
        )


# ---- Populations ----

class GeneratorKind(str, Enum):
    LINEAR_MARGIN = "linear_margin"
    UNIFORM_BALL = "uniform_ball"
    LINEAR_REGRESSION = "linear_regression"


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    generator: GeneratorKind
    dimension: int
    feature_bound: float = 1.0
    seed: int = 0
    w_true: Optional[np.ndarray] = None
    noise_rate: float = 0.0
    noise_scale: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "generator", GeneratorKind(self.generator))
        if self.dimension < 1:
            raise ConfigurationError("dimension must be >= 1", field="dimension")
        if not self.feature_bound > 0:
            raise ConfigurationError("feature_bound must be positive", field="feature_bound")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigurationError("noise_rate must lie in [0, 1]", field="noise_rate")
        if self.generator is not GeneratorKind.UNIFORM_BALL:
            if self.w_true is None:
                raise ConfigurationError(f"{self.generator.value} needs w_true", field="w_true")
            object.__setattr__(self, "w_true", as_vector(self.w_true, self.dimension, "w_true"))

    @property
    def label_bound(self) -> float:
        if self.generator is GeneratorKind.LINEAR_REGRESSION:
            return float(np.linalg.norm(self.w_true)) * self.feature_bound + self.noise_scale
        return 1.0

    def describe(self) -> dict:
        return {
            "generator": self.generator.value,
            "dimension": self.dimension,
            "feature_bound": self.feature_bound,
            "seed": self.seed,
            "w_true": None if self.w_true is None else self.w_true.tolist(),
            "noise_rate": self.noise_rate,
            "noise_scale": self.noise_scale,
        }


def _ball_features(rng: np.random.Generator, n: int, d: int, bound: float) -> np.ndarray:
    # uniform in the ball of radius `bound`; the norm bound holds by construction
    direction = rng.standard_normal((n, d))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radius = bound * rng.random((n, 1)) ** (1.0 / d)
    return direction / norms * radius


def draw_arrays(spec: PopulationSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """n i.i.d. draws as stacked (X, y)."""
    if n < 1:
        raise ConfigurationError("sample size must be >= 1", field="n")
    X = _ball_features(rng, n, spec.dimension, spec.feature_bound)
    if spec.generator is GeneratorKind.LINEAR_MARGIN:
        y = np.where(X @ spec.w_true >= 0.0, 1.0, -1.0)
        flips = rng.random(n) < spec.noise_rate
        y = np.where(flips, -y, y)
    elif spec.generator is GeneratorKind.UNIFORM_BALL:
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    else:
        y = X @ spec.w_true + rng.uniform(-spec.noise_scale, spec.noise_scale, n)
    return X, y


def draw_dataset(spec: PopulationSpec, n: int, rng: np.random.Generator) -> List[DataPoint]:
    X, y = draw_arrays(spec, n, rng)
    return [DataPoint(features=X[i], label=float(y[i])) for i in range(n)]


def draw_sample(spec: PopulationSpec, rng: np.random.Generator) -> DataPoint:
    return draw_dataset(spec, 1, rng)[0]


def dataset_arrays(dataset: List[DataPoint]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.vstack([p.features for p in dataset])
    y = np.array([p.label for p in dataset], dtype=float)
    return X, y


# ---- Dataset files ----

def write_dataset(path: Path, dataset: List[DataPoint], seed: int) -> Path:
    """`# dim=<d> n=<n> seed=<s>` then one `f1,...,fd,label` line per point."""
    path = Path(path)
    X, y = dataset_arrays(dataset)
    frame = pd.DataFrame(np.column_stack([X, y]))
    with open(path, "w", newline="") as fh:
        fh.write(f"# dim={X.shape[1]} n={X.shape[0]} seed={seed}\n")
        frame.to_csv(fh, header=False, index=False, float_format="%.17g", lineterminator="\n")
    logger.debug("wrote %d points to %s", len(dataset), path)
    return path


def read_dataset(path: Path, feature_bound: Optional[float] = None) -> Tuple[List[DataPoint], dict]:
    """Parse a `write_dataset` file; rows with ‖x‖ > feature_bound are rejected."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
    if not header.startswith("#"):
        raise ConfigurationError(f"{path}: missing '# dim=.. n=.. seed=..' header", field="dataset")
    meta = dict(tok.split("=", 1) for tok in header.lstrip("# ").split())
    meta = {k: int(v) for k, v in meta.items()}
    frame = pd.read_csv(path, comment="#", header=None, float_precision="round_trip")
    values = frame.to_numpy(dtype=float)
    if values.shape != (meta["n"], meta["dim"] + 1):
        raise ConfigurationError(
            f"{path}: header says n={meta['n']} dim={meta['dim']}, body has shape {values.shape}",
            field="dataset",
        )
    if feature_bound is not None:
        norms = np.linalg.norm(values[:, :-1], axis=1)
        if norms.size and norms.max() > feature_bound + SET_TOL:
            raise ConfigurationError(
                f"{path}: row {int(np.argmax(norms))} has ‖x‖={norms.max():.6g} > {feature_bound:g}",
                field="features",
            )
    return [DataPoint(features=row[:-1].copy(), label=float(row[-1])) for row in values], meta
