"""Kernel evaluation, Nyström reduced-rank kernels and RKHS test functions.

Points are handled as ``(n, d)`` float arrays.  A 1-d array is read as ``n``
points when the kernel dimension is 1 and as a single point otherwise.

>>> se = KernelSpec.squared_exponential(lengthscale=1.0)
>>> round(eval_kernel(se, [0.0], [1.0]), 5)
0.60653
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import rng as _rng

SE = "se"
MATERN = "matern"
TABULATED = "tabulated"

_MATERN_NUS = (0.5, 1.5, 2.5)

# jitter policy, relative to k_max
JITTER_START = 1e-10
JITTER_MAX = 1e-6
PSD_EPS = 1e-8


class DimensionError(ValueError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """A positive-definite kernel with fixed hyperparameters.

    ``family`` is one of ``"se"``, ``"matern"`` (with ``nu`` in
    {1/2, 3/2, 5/2}) or ``"tabulated"``.  Tabulated kernels live on a finite
    domain of integer point ids ``0..p-1`` (``d == 1``) and read values from
    ``table``.
    """

    family: str = SE
    lengthscale: float = 1.0
    variance: float = 1.0
    dim: int = 1
    nu: float | None = None
    table: np.ndarray | None = field(default=None, compare=False, repr=False)
    ids: tuple | None = field(default=None, compare=False, repr=False)
    jitter: float | None = None

    def __post_init__(self):
        if self.family not in (SE, MATERN, TABULATED):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")
        if self.family == MATERN and self.nu not in _MATERN_NUS:
            raise ValueError("Matern smoothness must be one of 0.5, 1.5, 2.5")
        if self.family == TABULATED:
            table = np.asarray(self.table, dtype=float)
            if table.ndim != 2 or table.shape[0] != table.shape[1]:
                raise ValueError("tabulated kernel needs a square table")
            if not np.allclose(table, table.T, atol=1e-12):
                raise ValueError("tabulated kernel table is not symmetric")
            object.__setattr__(self, "table", table)
            object.__setattr__(self, "dim", 1)
        else:
            if not (self.lengthscale > 0 and self.variance > 0):
                raise ValueError("lengthscale and variance must be positive")

    @classmethod
    def squared_exponential(cls, lengthscale=1.0, variance=1.0, dim=1):
        return cls(SE, float(lengthscale), float(variance), int(dim))

    @classmethod
    def matern(cls, nu, lengthscale=1.0, variance=1.0, dim=1):
        return cls(MATERN, float(lengthscale), float(variance), int(dim), nu=float(nu))

    @classmethod
    def tabulated(cls, table, ids=None):
        table = np.asarray(table, dtype=float)
        return cls(TABULATED, table=table, ids=None if ids is None else tuple(ids))

    @property
    def stationary(self) -> bool:
        return self.family != TABULATED

    @property
    def k_max(self) -> float:
        if self.family == TABULATED:
            return float(np.max(np.diag(self.table)))
        return float(self.variance)

    def points(self, A) -> np.ndarray:
        return as_points(A, self.dim)

    def __call__(self, A, B=None) -> np.ndarray:
        A = self.points(A)
        B = A if B is None else self.points(B)
        if self.family == TABULATED:
            return self.table[np.ix_(self._index(A), self._index(B))]
        r2 = _sq_dist(A, B) / self.lengthscale**2
        return self.variance * _profile(self.family, self.nu, r2)

    def diag(self, A) -> np.ndarray:
        A = self.points(A)
        if self.family == TABULATED:
            idx = self._index(A)
            return self.table[idx, idx].copy()
        return np.full(A.shape[0], self.variance)

    def _index(self, A) -> np.ndarray:
        idx = np.rint(A[:, 0]).astype(int)
        if np.any(np.abs(A[:, 0] - idx) > 0) or np.any(idx < 0) or np.any(idx >= self.table.shape[0]):
            raise DimensionError("tabulated kernel points must be integer ids in range")
        return idx

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        if self.family == TABULATED:
            out["table"] = self.table.tolist()
            if self.ids is not None:
                out["ids"] = list(self.ids)
            return out
        out.update(lengthscale=self.lengthscale, variance_scale=self.variance, d=self.dim)
        if self.family == MATERN:
            out["nu"] = self.nu
        if self.jitter is not None:
            out["jitter"] = self.jitter
        return out

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> "KernelSpec":
        family = str(cfg.get("family", SE)).lower()
        family = {"squaredexponential": SE, "squared_exponential": SE, "rbf": SE}.get(family, family)
        if family == TABULATED:
            if "csv" in cfg:
                return load_tabulated_csv(cfg["csv"])
            return cls.tabulated(cfg["table"], cfg.get("ids"))
        kw = dict(
            lengthscale=float(cfg.get("lengthscale", 1.0)),
            variance=float(cfg.get("variance_scale", cfg.get("variance", 1.0))),
            dim=int(cfg.get("d", cfg.get("dim", 1))),
        )
        jitter = cfg.get("jitter")
        if family == MATERN:
            spec = cls.matern(float(cfg["nu"]), **kw)
        elif family == SE:
            spec = cls.squared_exponential(**kw)
        else:
            raise ValueError(f"unknown kernel family {family!r}")
        return spec if jitter is None else replace(spec, jitter=float(jitter))


def as_points(A, d: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(-1, 1) if d == 1 else A.reshape(1, -1)
    if A.ndim != 2:
        raise DimensionError("points must be a 2-d array")
    if A.shape[1] != d and not (A.shape[0] == 0):
        raise DimensionError(f"expected points of dimension {d}, got {A.shape[1]}")
    if A.shape[0] == 0:
        return A.reshape(0, d)
    return A


def _sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # differences are formed explicitly, never through |a|^2 + |b|^2 - 2ab
    d = A.shape[1]
    if d == 1:
        diff = A[:, 0, None] - B[None, :, 0]
        return diff * diff
    if d <= 8:
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    total = np.zeros((A.shape[0], B.shape[0]))
    comp = np.zeros_like(total)
    for k in range(d):
        term = (A[:, k, None] - B[None, :, k]) ** 2 - comp
        new = total + term
        comp = (new - total) - term
        total = new
    return total


def _profile(family: str, nu: float | None, r2: np.ndarray) -> np.ndarray:
    if family == SE:
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        s = math.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    s = math.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    if x.shape[1] != spec.dim or x2.shape[1] != spec.dim:
        raise DimensionError(f"expected points of dimension {spec.dim}")
    return float(spec(x, x2)[0, 0])


def kernel_matrix(spec: KernelSpec, A, B=None) -> np.ndarray:
    return spec(A, B)


def factor_with_jitter(K: np.ndarray, k_max: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + eta*I`` under the escalating jitter policy.

    Returns ``(L, eta)``.  ``eta`` starts at ``1e-10*k_max`` and grows by 10x
    up to ``1e-6*k_max``.
    """
    m = K.shape[0]
    eta = JITTER_START * k_max
    while eta <= JITTER_MAX * k_max * (1 + 1e-9):
        try:
            L = sla.cholesky(K + eta * np.eye(m), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, eta
        except np.linalg.LinAlgError:
            pass
        eta *= 10.0
    raise FactorizationError(f"kernel matrix not factorizable with jitter up to {JITTER_MAX:g}*k_max")


@dataclass(frozen=True)
class ReducedRankKernel:
    """Nyström kernel ``kappa(x, x') = k_Z(x)^T (K_ZZ + eta I)^{-1} k_Z(x')``."""

    base: KernelSpec
    inducing: np.ndarray
    factor: np.ndarray
    jitter: float

    @property
    def m(self) -> int:
        return self.inducing.shape[0]

    def features(self, A) -> np.ndarray:
        """``L^{-1} k_Z(A)``, shape ``(m, n)``; ``kappa(A, B) = F_A^T F_B``."""
        KZA = self.base(self.inducing, A)
        return sla.solve_triangular(self.factor, KZA, lower=True, check_finite=False)

    def __call__(self, A, B=None) -> np.ndarray:
        FA = self.features(A)
        FB = FA if B is None else self.features(B)
        return FA.T @ FB

    def diag(self, A) -> np.ndarray:
        F = self.features(A)
        return np.einsum("ij,ij->j", F, F)


def reduced_rank(spec: KernelSpec, Z, jitter: float | None = None) -> ReducedRankKernel:
    """Factor ``k_{Z,Z}``; a fixed ``jitter`` (argument or spec) bypasses the escalation policy."""
    Z = spec.points(Z)
    jitter = spec.jitter if jitter is None else jitter
    if Z.shape[0] == 0:
        raise ValueError("inducing set must be nonempty")
    KZZ = spec(Z)
    if jitter is None:
        L, eta = factor_with_jitter(KZZ, spec.k_max)
    else:
        eta = float(jitter)
        try:
            L = sla.cholesky(KZZ + eta * np.eye(Z.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(str(exc)) from exc
    return ReducedRankKernel(spec, Z, L, eta)


@dataclass(frozen=True)
class RkhsFunction:
    """``f(x) = sum_i alpha_i k(x, c_i)`` with its RKHS norm."""

    centers: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    rkhs_norm: float = float("nan")

    def __post_init__(self):
        C = self.kernel.points(self.centers)
        a = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if a.shape[0] != C.shape[0]:
            raise ValueError("one coefficient per center required")
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "coefficients", a)
        if math.isnan(self.rkhs_norm):
            object.__setattr__(self, "rkhs_norm", self.recompute_norm())

    def recompute_norm(self) -> float:
        a = self.coefficients
        q = float(a @ self.kernel(self.centers) @ a)
        return math.sqrt(max(q, 0.0))

    def __call__(self, X) -> np.ndarray:
        return self.kernel(X, self.centers) @ self.coefficients


def sample_rkhs_function(
    spec: KernelSpec,
    num_centers: int,
    norm_bound: float,
    seed: int,
    bounds: Sequence[float] | np.ndarray = (0.0, 1.0),
    candidates=None,
    max_retries: int = 10,
) -> RkhsFunction:
    """Random kernel expansion rescaled to RKHS norm exactly ``norm_bound``.

    Centers are uniform in the box ``bounds`` (``(lo, hi)`` or a ``(d, 2)``
    array) or drawn without replacement from ``candidates``.  The overall sign
    is fixed so the largest coefficient is positive.
    """
    if num_centers < 1 or norm_bound <= 0:
        raise ValueError("need num_centers >= 1 and a positive norm bound")
    gen = _rng.stream(seed, _rng.FUNCTION)
    if spec.family == TABULATED and candidates is None:
        candidates = np.arange(spec.table.shape[0], dtype=float).reshape(-1, 1)
    for _ in range(max_retries):
        if candidates is not None:
            cand = spec.points(candidates)
            pick = gen.choice(cand.shape[0], size=min(num_centers, cand.shape[0]), replace=False)
            C = cand[np.sort(pick)]
        else:
            box = np.asarray(bounds, dtype=float)
            box = np.tile(box, (spec.dim, 1)) if box.ndim == 1 else box
            C = box[:, 0] + (box[:, 1] - box[:, 0]) * gen.random((num_centers, spec.dim))
        a = gen.standard_normal(C.shape[0])
        K = spec(C)
        try:
            _, eta = factor_with_jitter(K, spec.k_max)
        except FactorizationError:
            continue
        q = float(a @ K @ a)
        if q <= eta * float(a @ a):
            continue
        a = a * (norm_bound / math.sqrt(q))
        if a[np.argmax(np.abs(a))] < 0:
            a = -a
        return RkhsFunction(C, a, spec, float(norm_bound))
    raise FactorizationError("could not draw a nondegenerate center set")


def load_tabulated_csv(path) -> KernelSpec:
    """Tabulated kernel from CSV; the header row holds the point ids."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    ids = [h.strip() for h in rows[0]]
    table = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    if table.shape != (len(ids), len(ids)):
        raise ValueError("tabulated CSV must be square with one header row")
    return KernelSpec.tabulated(table, ids)


def save_tabulated_csv(spec: KernelSpec, path) -> None:
    ids = spec.ids if spec.ids is not None else tuple(str(i) for i in range(spec.table.shape[0]))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ids)
        for row in spec.table:
            w.writerow([repr(float(v)) for v in row])
