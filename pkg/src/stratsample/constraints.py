"""Constraint systems, manifold labels, and stratification specifications.

A stratification is described by a family of scalar functions q_1..q_nfcns
together with a label vector that tags each function as an equality (EQ),
a strict inequality (IN), or unused (NONE).  Each label vector identifies
one manifold; neighbouring manifolds differ by a single tag flip.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

# Tag values for label vectors.  The numeric encoding is part of the file
# formats and of the compiled kernels, so it must not change.
NONE = 0
EQ = 1
IN = 2

# Per-function flags for free-form stratifications.
VARY = 0
FIX = 1

_TAG_CHARS = {NONE: "N", EQ: "E", IN: "I"}


class StratificationError(ValueError):
    """Invalid label vector or stratification specification."""


class DegenerateConfigurationError(RuntimeError):
    """Constraint gradients lost rank: the regularity assumption failed."""


def as_labels(tags) -> np.ndarray:
    """Validate and normalize a label vector to an int8 array."""
    arr = np.asarray(tags, dtype=np.int8)
    if arr.ndim != 1:
        raise StratificationError("label vector must be one-dimensional")
    if not np.isin(arr, (NONE, EQ, IN)).all():
        raise StratificationError(f"label tags must be in {{0,1,2}}, got {arr}")
    return arr


def label_string(labels) -> str:
    """Canonical text form of a label vector, e.g. 'EEIN'."""
    return "".join(_TAG_CHARS[int(t)] for t in labels)


def eq_indices(labels) -> np.ndarray:
    return np.flatnonzero(np.asarray(labels) == EQ)


def in_indices(labels) -> np.ndarray:
    return np.flatnonzero(np.asarray(labels) == IN)


def manifold_dims(labels, n_vars: int) -> tuple[int, int]:
    """Number of equality constraints and manifold dimension (m, d)."""
    m = int(np.count_nonzero(np.asarray(labels) == EQ))
    d = n_vars - m
    if d < 0:
        raise StratificationError(
            f"{m} equality constraints exceed the ambient dimension {n_vars}"
        )
    return m, d


class ConstraintSystem:
    """A family of differentiable scalar functions with gradients.

    Subclasses implement ``value(i, x)`` and ``gradient(i, x)``.  Both must
    be deterministic and side-effect free; gradients are checked against
    finite differences in the self-test suite.
    """

    def __init__(self, n_vars: int, n_fcns: int):
        if n_vars < 1 or n_fcns < 1:
            raise StratificationError("n_vars and n_fcns must be positive")
        self.n_vars = n_vars
        self.n_fcns = n_fcns

    def value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_index(self, i: int):
        if not 0 <= i < self.n_fcns:
            raise IndexError(f"constraint index {i} out of range [0, {self.n_fcns})")

    def values(self, x: np.ndarray, indices=None) -> np.ndarray:
        """Evaluate several functions at once."""
        if indices is None:
            indices = range(self.n_fcns)
        return np.array([self.value(i, x) for i in indices], dtype=float)

    def gradient_matrix(self, indices, x: np.ndarray) -> np.ndarray:
        """Matrix whose columns are gradients of the selected functions."""
        cols = [self.gradient(i, x) for i in indices]
        if not cols:
            return np.zeros((self.n_vars, 0))
        return np.column_stack(cols)


class CallableConstraintSystem(ConstraintSystem):
    """Constraint system defined by user-supplied callables."""

    def __init__(self, n_vars, value_fns, gradient_fns):
        if len(value_fns) != len(gradient_fns):
            raise StratificationError("need one gradient per function")
        super().__init__(n_vars, len(value_fns))
        self._values = list(value_fns)
        self._grads = list(gradient_fns)

    def value(self, i, x):
        self._check_index(i)
        return float(self._values[i](np.asarray(x, dtype=float)))

    def gradient(self, i, x):
        self._check_index(i)
        g = np.asarray(self._grads[i](np.asarray(x, dtype=float)), dtype=float)
        if g.shape != (self.n_vars,):
            raise StratificationError(f"gradient {i} has shape {g.shape}")
        return g


@dataclass(frozen=True)
class PairDistance2:
    """q(x) = |x_i - x_j|^2 - target^2 for particles of dimension `dim`."""

    i: int
    j: int
    dim: int
    target: float = 1.0

    def value(self, x):
        d = x[self.i * self.dim:(self.i + 1) * self.dim] - \
            x[self.j * self.dim:(self.j + 1) * self.dim]
        return float(d @ d) - self.target ** 2

    def gradient(self, x):
        g = np.zeros(x.shape[0])
        d = x[self.i * self.dim:(self.i + 1) * self.dim] - \
            x[self.j * self.dim:(self.j + 1) * self.dim]
        g[self.i * self.dim:(self.i + 1) * self.dim] = 2.0 * d
        g[self.j * self.dim:(self.j + 1) * self.dim] = -2.0 * d
        return g


@dataclass(frozen=True)
class DiagonalQuadratic:
    """q(x) = sum_k quad_k x_k^2 + lin . x + const."""

    quad: tuple
    lin: tuple
    const: float = 0.0

    def value(self, x):
        q = np.asarray(self.quad)
        a = np.asarray(self.lin)
        return float(q @ (x * x) + a @ x + self.const)

    def gradient(self, x):
        return 2.0 * np.asarray(self.quad) * x + np.asarray(self.lin)


class StructuredConstraintSystem(ConstraintSystem):
    """Constraint system built from structured terms.

    Structured systems are what the compiled kernels understand; systems of
    arbitrary callables always run on the pure-Python backend.
    """

    def __init__(self, n_vars, terms):
        super().__init__(n_vars, len(terms))
        self.terms = list(terms)

    def value(self, i, x):
        self._check_index(i)
        return self.terms[i].value(np.asarray(x, dtype=float))

    def gradient(self, i, x):
        self._check_index(i)
        return self.terms[i].gradient(np.asarray(x, dtype=float))


def check_gradients(system, x, rel_tol=1e-5, step=1e-6) -> float:
    """Worst relative error between gradients and central finite differences.

    Raises AssertionError when the error exceeds ``rel_tol``.
    """
    x = np.asarray(x, dtype=float)
    worst = 0.0
    for i in range(system.n_fcns):
        g = system.gradient(i, x)
        fd = np.empty_like(g)
        for k in range(system.n_vars):
            e = np.zeros_like(x)
            e[k] = step
            fd[k] = (system.value(i, x + e) - system.value(i, x - e)) / (2 * step)
        scale = max(np.linalg.norm(g), 1.0)
        worst = max(worst, np.linalg.norm(g - fd) / scale)
    if worst > rel_tol:
        raise AssertionError(f"gradient mismatch: relative error {worst:.3e}")
    return worst


@dataclass
class StratificationSpec:
    """Which manifolds make up the stratification.

    Two modes, matching how neighbour sets are found:

    * explicit: ``label_list`` enumerates every manifold; Gain/Lose
      neighbours are precomputed pairs of list entries whose equality sets
      differ by exactly one function.
    * free: ``fix_flags`` marks which functions may flip between equality
      and inequality (or NONE for two-sided functions); neighbours are
      enumerated on the fly and memoized per label.
    """

    n_fcns: int
    label_list: list | None = None
    fix_flags: np.ndarray | None = None
    two_sided: np.ndarray | None = None
    _gain: dict = field(default_factory=dict, repr=False)
    _lose: dict = field(default_factory=dict, repr=False)
    _index: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if (self.label_list is None) == (self.fix_flags is None):
            raise StratificationError("provide exactly one of label_list, fix_flags")
        if self.two_sided is None:
            self.two_sided = np.zeros(self.n_fcns, dtype=bool)
        else:
            self.two_sided = np.asarray(self.two_sided, dtype=bool)
            if self.two_sided.shape != (self.n_fcns,):
                raise StratificationError("two_sided has wrong length")
        if self.label_list is not None:
            self.label_list = [as_labels(l) for l in self.label_list]
            for l in self.label_list:
                if l.shape != (self.n_fcns,):
                    raise StratificationError("label length != n_fcns")
            self._index = {l.tobytes(): k for k, l in enumerate(self.label_list)}
            if len(self._index) != len(self.label_list):
                raise StratificationError("duplicate labels in label_list")
            self._precompute_neighbours()
        else:
            self.fix_flags = np.asarray(self.fix_flags, dtype=np.int8)
            if self.fix_flags.shape != (self.n_fcns,):
                raise StratificationError("fix_flags has wrong length")

    @property
    def explicit(self) -> bool:
        return self.label_list is not None

    @property
    def n_manifolds(self) -> int | None:
        return len(self.label_list) if self.explicit else None

    def manifold_index(self, labels) -> int | None:
        """List index of a label in explicit mode, else None."""
        if not self.explicit:
            return None
        return self._index.get(np.asarray(labels, dtype=np.int8).tobytes())

    def manifold_id(self, labels) -> str:
        """Identifier used in traces: list index, or the label string."""
        idx = self.manifold_index(labels)
        return str(idx) if idx is not None else label_string(labels)

    def _precompute_neighbours(self):
        n = len(self.label_list)
        eq_sets = [frozenset(eq_indices(l).tolist()) for l in self.label_list]
        gain = {k: [] for k in range(n)}
        lose = {k: [] for k in range(n)}
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                # b is a Gain neighbour of a when b's equality set is a's
                # minus exactly one function.
                diff = eq_sets[a] - eq_sets[b]
                if len(diff) == 1 and eq_sets[b] <= eq_sets[a]:
                    k = next(iter(diff))
                    two = self.label_list[b][k] == NONE
                    gain[a].append((self.label_list[b], k, bool(two)))
                    lose[b].append((self.label_list[a], k, bool(two)))
        self._gain = {self.label_list[k].tobytes(): v for k, v in gain.items()}
        self._lose = {self.label_list[k].tobytes(): v for k, v in lose.items()}

    def _free_neighbours(self, labels):
        gain, lose = [], []
        for k in range(self.n_fcns):
            if self.fix_flags[k] == FIX:
                continue
            two = bool(self.two_sided[k])
            free_tag = NONE if two else IN
            if labels[k] == EQ:
                target = labels.copy()
                target[k] = free_tag
                gain.append((target, k, two))
            elif labels[k] == free_tag:
                target = labels.copy()
                target[k] = EQ
                lose.append((target, k, two))
        return gain, lose

    def gain_neighbours(self, labels):
        """Manifolds reached by dropping one equality constraint.

        Returns a list of (target labels, changed function index,
        two_sided) triples.
        """
        labels = np.asarray(labels, dtype=np.int8)
        key = labels.tobytes()
        if self.explicit:
            if key not in self._gain:
                raise StratificationError("labels not in the stratification")
            return self._gain[key]
        with self._lock:
            if key not in self._gain:
                self._gain[key], self._lose[key] = self._free_neighbours(labels)
            return self._gain[key]

    def lose_neighbours(self, labels):
        """Manifolds reached by adding one equality constraint."""
        labels = np.asarray(labels, dtype=np.int8)
        key = labels.tobytes()
        if self.explicit:
            if key not in self._lose:
                raise StratificationError("labels not in the stratification")
            return self._lose[key]
        with self._lock:
            if key not in self._lose:
                self._gain[key], self._lose[key] = self._free_neighbours(labels)
            return self._lose[key]


class ChainState:
    """A point together with the labels of the manifold it lies on.

    The tangent basis is cached because an accepted step already computed
    the basis at the new point.
    """

    __slots__ = ("x", "labels", "tangent", "_eq")

    def __init__(self, x, labels, tangent=None):
        self.x = np.asarray(x, dtype=float)
        self.labels = as_labels(labels)
        self.tangent = tangent
        self._eq = None

    @property
    def eq(self) -> np.ndarray:
        if self._eq is None:
            self._eq = eq_indices(self.labels)
        return self._eq

    def dims(self) -> tuple[int, int]:
        return manifold_dims(self.labels, self.x.shape[0])

    def copy(self):
        return ChainState(self.x.copy(), self.labels.copy(), self.tangent)

    def check_feasible(self, system, tol):
        """All equalities hold within tol; all inequalities strictly positive."""
        for i in self.eq:
            if abs(system.value(i, self.x)) > tol:
                return False
        for i in in_indices(self.labels):
            if system.value(i, self.x) <= 0.0:
                return False
        return True
