"""Second-order mechanical model with quadratic/cubic force tensors.

The model is ``M x'' + C x' + K x + f(x) = 0`` with Rayleigh damping
``C = alpha_r M + beta_r K`` and a polynomial internal force
``f_i = T2[i,j,k] x_j x_k + T3[i,j,k,l] x_j x_k x_l``.

Force tensors are stored as coordinate lists with sorted trailing indices and
pre-symmetrized values, so the contraction order of the trailing arguments is
irrelevant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ModelError


def _accum(idx: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    """Sum `weights` into an n-vector at positions `idx` (complex-safe)."""
    if np.iscomplexobj(weights):
        return np.bincount(idx, weights.real, minlength=n) + 1j * np.bincount(
            idx, weights.imag, minlength=n
        )
    return np.bincount(idx, weights, minlength=n)


@dataclass(frozen=True)
class SymTensor2:
    """Sparse order-3 tensor, symmetric over its two trailing indices.

    Entries are stored once per canonical key (i, j, k) with j <= k; the value
    carries the permutation multiplicity, so ``force(x) = sum v*x[j]*x[k]``.
    """

    n: int
    idx: np.ndarray = field(repr=False)  # (nnz, 3) int
    vals: np.ndarray = field(repr=False)  # (nnz,) float

    @classmethod
    def from_entries(cls, n: int, entries) -> "SymTensor2":
        entries = list(entries)
        if not entries:
            return cls.empty(n)
        arr = np.asarray([[e[0], e[1], e[2]] for e in entries], dtype=np.intp)
        vals = np.asarray([e[3] for e in entries], dtype=float)
        if arr.min() < 0 or arr.max() >= n:
            raise ModelError("tensor index out of range")
        idx = np.column_stack([arr[:, 0], np.sort(arr[:, 1:], axis=1)])
        key_order = np.lexsort(idx.T[::-1])
        idx = idx[key_order]
        vals = vals[key_order]
        newgrp = np.ones(len(idx), dtype=bool)
        newgrp[1:] = np.any(idx[1:] != idx[:-1], axis=1)
        starts = np.nonzero(newgrp)[0]
        summed = np.add.reduceat(vals, starts)
        keep = summed != 0.0
        return cls(n, idx[starts][keep], summed[keep])

    @classmethod
    def empty(cls, n: int) -> "SymTensor2":
        return cls(n, np.zeros((0, 3), dtype=np.intp), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_entries(self) -> list[list[float]]:
        return [[int(i), int(j), int(k), float(v)] for (i, j, k), v in zip(self.idx, self.vals)]

    def scaled(self, alpha: float) -> "SymTensor2":
        return SymTensor2(self.n, self.idx, alpha * self.vals)

    # Entrywise pair kernel: exact only when summed over permutation-closed
    # decomposition sets or with equal arguments. Use `bilinear` otherwise.
    def contract_pair(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.nnz == 0:
            return np.zeros(self.n, dtype=np.result_type(x, y))
        i, j, k = self.idx.T
        return _accum(i, self.vals * x[j] * y[k], self.n)

    def bilinear(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Symmetric bilinear contraction; invariant under swapping x and y."""
        return 0.5 * (self.contract_pair(x, y) + self.contract_pair(y, x))

    def force(self, x: np.ndarray) -> np.ndarray:
        return self.contract_pair(x, x)

    def contract_pair_sum(self, pairs) -> np.ndarray:
        """Sum of contract_pair over (x, y) argument pairs; one accumulation."""
        if self.nnz == 0 or not pairs:
            return np.zeros(self.n, dtype=complex)
        i, j, k = self.idx.T
        G = np.zeros(self.nnz, dtype=complex)
        for x, y in pairs:
            G += x[j] * y[k]
        return _accum(i, self.vals * G, self.n)

    def vjp_pair(self, v: np.ndarray, slot: int, other: np.ndarray) -> np.ndarray:
        """Row-vector product r_p = sum_i v_i d(contract_pair)_i / d(arg_slot)_p."""
        if self.nnz == 0:
            return np.zeros(self.n, dtype=np.result_type(v, other))
        i, j, k = self.idx.T
        if slot == 0:
            return _accum(j, self.vals * v[i] * other[k], self.n)
        return _accum(k, self.vals * v[i] * other[j], self.n)


@dataclass(frozen=True)
class SymTensor3:
    """Sparse order-4 tensor, symmetric over its three trailing indices."""

    n: int
    idx: np.ndarray = field(repr=False)  # (nnz, 4) int
    vals: np.ndarray = field(repr=False)

    @classmethod
    def from_entries(cls, n: int, entries) -> "SymTensor3":
        entries = list(entries)
        if not entries:
            return cls.empty(n)
        arr = np.asarray([[e[0], e[1], e[2], e[3]] for e in entries], dtype=np.intp)
        vals = np.asarray([e[4] for e in entries], dtype=float)
        if arr.min() < 0 or arr.max() >= n:
            raise ModelError("tensor index out of range")
        idx = np.column_stack([arr[:, 0], np.sort(arr[:, 1:], axis=1)])
        key_order = np.lexsort(idx.T[::-1])
        idx = idx[key_order]
        vals = vals[key_order]
        newgrp = np.ones(len(idx), dtype=bool)
        newgrp[1:] = np.any(idx[1:] != idx[:-1], axis=1)
        starts = np.nonzero(newgrp)[0]
        summed = np.add.reduceat(vals, starts)
        keep = summed != 0.0
        return cls(n, idx[starts][keep], summed[keep])

    @classmethod
    def empty(cls, n: int) -> "SymTensor3":
        return cls(n, np.zeros((0, 4), dtype=np.intp), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_entries(self) -> list[list[float]]:
        return [
            [int(i), int(j), int(k), int(l), float(v)]
            for (i, j, k, l), v in zip(self.idx, self.vals)
        ]

    def scaled(self, alpha: float) -> "SymTensor3":
        return SymTensor3(self.n, self.idx, alpha * self.vals)

    def contract_triple(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.nnz == 0:
            return np.zeros(self.n, dtype=np.result_type(x, y, z))
        i, j, k, l = self.idx.T
        return _accum(i, self.vals * x[j] * y[k] * z[l], self.n)

    def trilinear(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Fully symmetric trilinear contraction (argument order irrelevant)."""
        acc = (
            self.contract_triple(x, y, z)
            + self.contract_triple(x, z, y)
            + self.contract_triple(y, x, z)
            + self.contract_triple(y, z, x)
            + self.contract_triple(z, x, y)
            + self.contract_triple(z, y, x)
        )
        return acc / 6.0

    def force(self, x: np.ndarray) -> np.ndarray:
        return self.contract_triple(x, x, x)

    def contract_triple_sum(self, triples) -> np.ndarray:
        """Sum of contract_triple over (x, y, z) triples; one accumulation."""
        if self.nnz == 0 or not triples:
            return np.zeros(self.n, dtype=complex)
        i, j, k, l = self.idx.T
        G = np.zeros(self.nnz, dtype=complex)
        for x, y, z in triples:
            G += x[j] * y[k] * z[l]
        return _accum(i, self.vals * G, self.n)

    def vjp_triple(self, v: np.ndarray, slot: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Row-vector product against the derivative of contract_triple.

        `a`, `b` are the two arguments that stay fixed, in positional order.
        """
        if self.nnz == 0:
            return np.zeros(self.n, dtype=np.result_type(v, a, b))
        i, j, k, l = self.idx.T
        if slot == 0:
            return _accum(j, self.vals * v[i] * a[k] * b[l], self.n)
        if slot == 1:
            return _accum(k, self.vals * v[i] * a[j] * b[l], self.n)
        return _accum(l, self.vals * v[i] * a[j] * b[k], self.n)


def _check_symmetric(name: str, a: np.ndarray, tol: float = 1e-10):
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > tol * scale:
        raise ModelError(f"{name} matrix is not symmetric")


@dataclass(frozen=True)
class MechModel:
    """Immutable mechanical system; safe for concurrent read-only use."""

    M: np.ndarray
    K: np.ndarray
    alpha_r: float
    beta_r: float
    T2: SymTensor2
    T3: SymTensor3

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        K = np.asarray(self.K, dtype=float)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)
        n = M.shape[0]
        if M.shape != (n, n) or K.shape != (n, n):
            raise ModelError("M and K must be square matrices of equal size")
        _check_symmetric("mass", M)
        _check_symmetric("stiffness", K)
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ModelError("mass matrix is not positive definite") from None
        kmin = float(scipy.linalg.eigvalsh(K, subset_by_index=[0, 0])[0])
        if kmin < -1e-10 * max(1.0, float(np.abs(K).max())):
            raise ModelError("stiffness matrix is not positive semidefinite")
        if self.alpha_r < 0 or self.beta_r < 0:
            raise ModelError("Rayleigh coefficients must be nonnegative")
        if self.T2.n != n or self.T3.n != n:
            raise ModelError("tensor dimension does not match matrix size")

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def damping(self) -> np.ndarray:
        """Rayleigh damping matrix alpha_r*M + beta_r*K."""
        return self.alpha_r * self.M + self.beta_r * self.K

    def nonlinear_force(self, x: np.ndarray) -> np.ndarray:
        """Quadratic plus cubic internal force at displacement x."""
        return self.T2.force(x) + self.T3.force(x)

    def first_order_operators(self) -> tuple[np.ndarray, np.ndarray]:
        """Matrices (B, A) of the equivalent first-order form B z' = A z + F(z)."""
        n = self.n
        C = self.damping()
        B = np.zeros((2 * n, 2 * n))
        B[:n, :n] = C
        B[:n, n:] = self.M
        B[n:, :n] = self.M
        A = np.zeros((2 * n, 2 * n))
        A[:n, :n] = -self.K
        A[n:, n:] = self.M
        return B, A

    def first_order_nonlinearity(self, z: np.ndarray) -> np.ndarray:
        """F(z) = [-f(x); 0] for the first-order form, with x = z[:n]."""
        n = self.n
        F = np.zeros(2 * n, dtype=z.dtype)
        F[:n] = -(self.T2.force(z[:n]) + self.T3.force(z[:n]))
        return F


@dataclass(frozen=True)
class ParamDerivatives:
    """Per-design-variable derivatives of all system operators.

    The damping derivative is implied: dC = alpha_r*dM + beta_r*dK.
    """

    names: tuple[str, ...]
    dM: tuple[np.ndarray, ...]
    dK: tuple[np.ndarray, ...]
    dT2: tuple[SymTensor2, ...]
    dT3: tuple[SymTensor3, ...]

    def __post_init__(self):
        p = len(self.names)
        if not (len(self.dM) == len(self.dK) == len(self.dT2) == len(self.dT3) == p):
            raise ModelError("parameter derivative lists must have equal length")

    @property
    def count(self) -> int:
        return len(self.names)

    def dC(self, i: int, model: MechModel) -> np.ndarray:
        return model.alpha_r * self.dM[i] + model.beta_r * self.dK[i]


@dataclass(frozen=True)
class LightDampingVerdict:
    """Admissibility of the light-damping condition at a given frequency."""

    valid: bool
    never_satisfied: bool
    omega_interval: tuple[float, float]


def check_light_damping(alpha_r: float, beta_r: float, omega: float) -> LightDampingVerdict:
    """Check alpha_r - 2*omega + beta_r*omega**2 < 0 and report the valid interval.

    The interval depends on which Rayleigh coefficients vanish; when the
    product alpha_r*beta_r reaches 1 the condition cannot hold at any
    frequency.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if beta_r == 0.0 and alpha_r == 0.0:
        interval, never = (0.0, np.inf), False
    elif beta_r == 0.0:
        interval, never = (alpha_r / 2.0, np.inf), False
    elif alpha_r == 0.0:
        interval, never = (0.0, 2.0 / beta_r), False
    elif alpha_r * beta_r < 1.0:
        root = np.sqrt(1.0 - alpha_r * beta_r)
        interval, never = ((1.0 - root) / beta_r, (1.0 + root) / beta_r), False
    else:
        interval, never = (np.nan, np.nan), True
    valid = (alpha_r - 2.0 * omega + beta_r * omega**2) < 0.0
    return LightDampingVerdict(valid=valid, never_satisfied=never, omega_interval=interval)


def model_to_json(model: MechModel) -> dict:
    """Explicit matrix-form descriptor (0-based tensor indices)."""
    return {
        "type": "matrix",
        "n": model.n,
        "M": model.M.tolist(),
        "K": model.K.tolist(),
        "alpha_r": model.alpha_r,
        "beta_r": model.beta_r,
        "T2": model.T2.to_entries(),
        "T3": model.T3.to_entries(),
    }


def model_from_json(desc: dict) -> MechModel:
    if desc.get("type") != "matrix":
        raise ModelError(f"expected a matrix-form descriptor, got type={desc.get('type')!r}")
    n = int(desc["n"])
    return MechModel(
        M=np.asarray(desc["M"], dtype=float),
        K=np.asarray(desc["K"], dtype=float),
        alpha_r=float(desc.get("alpha_r", 0.0)),
        beta_r=float(desc.get("beta_r", 0.0)),
        T2=SymTensor2.from_entries(n, desc.get("T2", [])),
        T3=SymTensor3.from_entries(n, desc.get("T3", [])),
    )
