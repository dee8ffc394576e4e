"""Built-in parametrized model generators.

Two families:

* Grounded oscillator chains with per-spring quadratic/cubic forces. Each
  mass i feels, from every attached spring, the force
  ``k*d + k2*d**2 + k3*d**3`` with ``d = x_i - x_neighbor`` (ground
  displacement zero). Parameter derivatives are analytic.

* Clamped-clamped geometrically nonlinear beam assembled from 2-node
  elements with linear axial and cubic Hermite transverse interpolation and
  axial strain ``u' + w'**2 / 2``. The initial shape enters through the nodal
  coordinates (a sine-series heightmap), which activates quadratic
  axial-bending coupling for curved shapes. Parameter derivatives are central
  finite differences of the assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ModelError
from .mechmodel import MechModel, ParamDerivatives, SymTensor2, SymTensor3

FD_ASSEMBLY_RELSTEP = 1e-6


# -- oscillator chains -------------------------------------------------------


@dataclass(frozen=True)
class ChainSpec:
    """Chain of masses, the first one grounded through a spring."""

    n_masses: int = 2
    mass: float = 1.0
    k: float = 1.0
    k2: float = 0.5
    k3: float = 0.2
    alpha_r: float = 0.0
    beta_r: float = 0.1


def _chain_springs(n: int) -> list[tuple[int | None, int]]:
    """(left, right) mass indices per spring; None is the ground."""
    return [(None, 0)] + [(i, i + 1) for i in range(n - 1)]


def _chain_operators(spec: ChainSpec, k: float, k2: float, k3: float):
    n = spec.n_masses
    K = np.zeros((n, n))
    t2: list = []
    t3: list = []
    for left, right in _chain_springs(n):
        ends = [e for e in (left, right) if e is not None]
        for i in ends:
            other = right if i == left else left
            K[i, i] += k
            if other is not None:
                K[i, other] -= k
            o = other if other is not None else None
            # k2*(x_i - x_o)^2 and k3*(x_i - x_o)^3 acting on mass i
            if o is None:
                t2.append((i, i, i, k2))
                t3.append((i, i, i, i, k3))
            else:
                t2 += [(i, i, i, k2), (i, i, o, -2 * k2), (i, o, o, k2)]
                t3 += [
                    (i, i, i, i, k3),
                    (i, i, i, o, -3 * k3),
                    (i, i, o, o, 3 * k3),
                    (i, o, o, o, -k3),
                ]
    return K, SymTensor2.from_entries(n, t2), SymTensor3.from_entries(n, t3)


def build_chain(
    spec: ChainSpec, params: tuple[str, ...] = ("mass", "k", "k2", "k3")
) -> tuple[MechModel, ParamDerivatives]:
    """Chain model plus analytic derivatives for the selected shared parameters."""
    n = spec.n_masses
    if n < 1 or spec.mass <= 0:
        raise ModelError("chain needs at least one mass with positive mass value")
    K, T2, T3 = _chain_operators(spec, spec.k, spec.k2, spec.k3)
    model = MechModel(
        M=spec.mass * np.eye(n),
        K=K,
        alpha_r=spec.alpha_r,
        beta_r=spec.beta_r,
        T2=T2,
        T3=T3,
    )
    K1, T2u, T3u = _chain_operators(spec, 1.0, 1.0, 1.0)
    zeros = np.zeros((n, n))
    table = {
        "mass": (np.eye(n), zeros, SymTensor2.empty(n), SymTensor3.empty(n)),
        "k": (zeros, K1, SymTensor2.empty(n), SymTensor3.empty(n)),
        "k2": (zeros, zeros, T2u, SymTensor3.empty(n)),
        "k3": (zeros, zeros, SymTensor2.empty(n), T3u),
    }
    unknown = [p for p in params if p not in table]
    if unknown:
        raise ConfigError(f"unknown chain parameters: {unknown}")
    derivs = ParamDerivatives(
        names=tuple(params),
        dM=tuple(table[p][0] for p in params),
        dK=tuple(table[p][1] for p in params),
        dT2=tuple(table[p][2] for p in params),
        dT3=tuple(table[p][3] for p in params),
    )
    return model, derivs


def chain_per_spring_k3(spec: ChainSpec, count: int) -> ParamDerivatives:
    """One design variable per spring: its cubic coefficient (first `count` springs)."""
    n = spec.n_masses
    springs = _chain_springs(n)
    if count > len(springs):
        raise ConfigError(f"chain has only {len(springs)} springs, requested {count}")
    zeros = np.zeros((n, n))
    dT3 = []
    for s in range(count):
        left, right = springs[s]
        t3 = []
        ends = [e for e in (left, right) if e is not None]
        for i in ends:
            other = right if i == left else left
            if other is None:
                t3.append((i, i, i, i, 1.0))
            else:
                o = other
                t3 += [(i, i, i, i, 1.0), (i, i, i, o, -3.0), (i, i, o, o, 3.0), (i, o, o, o, -1.0)]
        dT3.append(SymTensor3.from_entries(n, t3))
    return ParamDerivatives(
        names=tuple(f"k3_{s}" for s in range(count)),
        dM=tuple(zeros for _ in range(count)),
        dK=tuple(zeros for _ in range(count)),
        dT2=tuple(SymTensor2.empty(n) for _ in range(count)),
        dT3=tuple(dT3),
    )


# -- von Karman beam ---------------------------------------------------------


@dataclass(frozen=True)
class VkBeamSpec:
    """Clamped-clamped beam with a two-harmonic sine heightmap.

    width=None means a square cross-section that tracks the thickness.
    poisson is retained as material metadata; the beam force law uses the
    Young's modulus directly.
    """

    n_elements: int = 10
    length: float = 1.0
    thickness: float = 0.01
    width: float | None = None
    a1: float = 0.0
    a2: float = 0.0
    youngs: float = 90e9
    poisson: float = 0.3
    density: float = 7850.0
    alpha_r: float = 0.0
    beta_r: float = 0.0


_GAUSS_XI, _GAUSS_W = np.polynomial.legendre.leggauss(5)
_GAUSS_XI = 0.5 * (_GAUSS_XI + 1.0)  # map to [0, 1]
_GAUSS_W = 0.5 * _GAUSS_W

_T2_ROT_PATH = np.einsum_path(
    "ijk,ia,jb,kc->abc", np.empty((6,) * 3), *([np.empty((6, 6))] * 3), optimize="optimal"
)[0]
_T3_ROT_PATH = np.einsum_path(
    "ijkl,ia,jb,kc,ld->abcd", np.empty((6,) * 4), *([np.empty((6, 6))] * 4), optimize="optimal"
)[0]


def _element_local(E: float, A: float, I: float, rho: float, Le: float):
    """Local matrices/tensors of one straight element, DOFs (u1,w1,t1,u2,w2,t2)."""
    K = np.zeros((6, 6))
    M = np.zeros((6, 6))
    T2 = np.zeros((6, 6, 6))
    T3 = np.zeros((6, 6, 6, 6))
    Bu = np.array([-1.0, 0, 0, 1.0, 0, 0]) / Le
    for xi, wgt in zip(_GAUSS_XI, _GAUSS_W):
        dx = wgt * Le
        Nu = np.array([1 - xi, 0, 0, xi, 0, 0])
        H = np.array(
            [
                0,
                1 - 3 * xi**2 + 2 * xi**3,
                Le * (xi - 2 * xi**2 + xi**3),
                0,
                3 * xi**2 - 2 * xi**3,
                Le * (-(xi**2) + xi**3),
            ]
        )
        G = np.array(
            [
                0,
                (-6 * xi + 6 * xi**2) / Le,
                1 - 4 * xi + 3 * xi**2,
                0,
                (6 * xi - 6 * xi**2) / Le,
                -2 * xi + 3 * xi**2,
            ]
        )
        S = np.array(
            [
                0,
                (-6 + 12 * xi) / Le**2,
                (-4 + 6 * xi) / Le,
                0,
                (6 - 12 * xi) / Le**2,
                (-2 + 6 * xi) / Le,
            ]
        )
        K += dx * (E * A * np.outer(Bu, Bu) + E * I * np.outer(S, S))
        M += dx * rho * A * (np.outer(Nu, Nu) + np.outer(H, H))
        # membrane coupling: EA * (w'^2/2 * du' + u'w' * dw') and EA/2 * w'^3 * dw'
        T2 += dx * E * A * (
            0.5 * np.einsum("i,j,k->ijk", Bu, G, G)
            + np.einsum("i,j,k->ijk", G, Bu, G)
        )
        T3 += dx * 0.5 * E * A * np.einsum("i,j,k,l->ijkl", G, G, G, G)
    return K, M, T2, T3


def _beam_nodes(spec: VkBeamSpec) -> np.ndarray:
    x = np.linspace(0.0, spec.length, spec.n_elements + 1)
    y = spec.a1 * np.sin(np.pi * x / spec.length) + spec.a2 * np.sin(
        2 * np.pi * x / spec.length
    )
    return np.column_stack([x, y])


def _assemble_vk(spec: VkBeamSpec):
    """Free-DOF operators (M, K dense; tensors as entry dicts) after clamping."""
    if spec.thickness <= 0 or spec.length <= 0:
        raise ModelError("beam thickness and length must be positive")
    if spec.n_elements < 2:
        raise ModelError("beam needs at least 2 elements")
    b = spec.width if spec.width is not None else spec.thickness
    if b <= 0:
        raise ModelError("beam width must be positive")
    A = b * spec.thickness
    I = b * spec.thickness**3 / 12.0
    nodes = _beam_nodes(spec)
    n_nodes = spec.n_elements + 1
    ndof = 3 * n_nodes
    M = np.zeros((ndof, ndof))
    K = np.zeros((ndof, ndof))
    t2: dict[tuple[int, int, int], float] = {}
    t3: dict[tuple[int, int, int, int], float] = {}
    for e in range(spec.n_elements):
        d = nodes[e + 1] - nodes[e]
        Le = float(np.hypot(*d))
        if Le <= 0:
            raise ModelError("inverted or degenerate beam geometry")
        c, s = d / Le
        Kl, Ml, T2l, T3l = _element_local(spec.youngs, A, I, spec.density, Le)
        R = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1.0]])
        T = np.zeros((6, 6))
        T[:3, :3] = R
        T[3:, 3:] = R
        Kg = T.T @ Kl @ T
        Mg = T.T @ Ml @ T
        T2g = np.einsum("ijk,ia,jb,kc->abc", T2l, T, T, T, optimize=_T2_ROT_PATH)
        T3g = np.einsum("ijkl,ia,jb,kc,ld->abcd", T3l, T, T, T, T, optimize=_T3_ROT_PATH)
        dofs = np.r_[3 * e : 3 * e + 3, 3 * (e + 1) : 3 * (e + 1) + 3]
        K[np.ix_(dofs, dofs)] += Kg
        M[np.ix_(dofs, dofs)] += Mg
        tol2 = 1e-14 * max(1.0, np.abs(T2g).max())
        tol3 = 1e-14 * max(1.0, np.abs(T3g).max())
        nz = np.nonzero(np.abs(T2g) > tol2)
        for a, bb, cc, v in zip(dofs[nz[0]], dofs[nz[1]], dofs[nz[2]], T2g[nz]):
            key = (a, bb, cc)
            t2[key] = t2.get(key, 0.0) + v
        nz = np.nonzero(np.abs(T3g) > tol3)
        for a, bb, cc, dd, v in zip(
            dofs[nz[0]], dofs[nz[1]], dofs[nz[2]], dofs[nz[3]], T3g[nz]
        ):
            key3 = (a, bb, cc, dd)
            t3[key3] = t3.get(key3, 0.0) + v
    # clamp both end nodes (all three DOFs each)
    fixed = list(range(3)) + list(range(ndof - 3, ndof))
    free = np.array([i for i in range(ndof) if i not in fixed])
    remap = {g: i for i, g in enumerate(free)}
    Mf = M[np.ix_(free, free)]
    Kf = K[np.ix_(free, free)]
    t2f = {}
    for (i, j, k), v in t2.items():
        if i in remap and j in remap and k in remap:
            t2f[(remap[i], remap[j], remap[k])] = v
    t3f = {}
    for (i, j, k, l), v in t3.items():
        if i in remap and j in remap and k in remap and l in remap:
            t3f[(remap[i], remap[j], remap[k], remap[l])] = v
    return Mf, Kf, t2f, t3f


def _vk_model(spec: VkBeamSpec) -> MechModel:
    Mf, Kf, t2, t3 = _assemble_vk(spec)
    n = Mf.shape[0]
    return MechModel(
        M=Mf,
        K=Kf,
        alpha_r=spec.alpha_r,
        beta_r=spec.beta_r,
        T2=SymTensor2.from_entries(n, [(i, j, k, v) for (i, j, k), v in t2.items()]),
        T3=SymTensor3.from_entries(
            n, [(i, j, k, l, v) for (i, j, k, l), v in t3.items()]
        ),
    )


VK_PARAM_FIELDS = {"a1": "a1", "a2": "a2", "h": "thickness", "L": "length"}


def build_vk_beam(
    spec: VkBeamSpec, params: tuple[str, ...] = ("a1", "a2", "h", "L")
) -> tuple[MechModel, ParamDerivatives]:
    """Beam model plus FD-of-assembly derivatives for shape/size parameters."""
    model = _vk_model(spec)
    dM, dK, dT2, dT3 = [], [], [], []
    for p in params:
        if p not in VK_PARAM_FIELDS:
            raise ConfigError(f"unknown beam parameter {p!r}")
        fld = VK_PARAM_FIELDS[p]
        mu = getattr(spec, fld)
        h = FD_ASSEMBLY_RELSTEP * (1.0 + abs(mu))
        plus = _assemble_vk(replace(spec, **{fld: mu + h}))
        minus = _assemble_vk(replace(spec, **{fld: mu - h}))
        dM.append((plus[0] - minus[0]) / (2 * h))
        dK.append((plus[1] - minus[1]) / (2 * h))
        keys2 = set(plus[2]) | set(minus[2])
        dT2.append(
            SymTensor2.from_entries(
                model.n,
                [
                    (*key, (plus[2].get(key, 0.0) - minus[2].get(key, 0.0)) / (2 * h))
                    for key in keys2
                ],
            )
        )
        keys3 = set(plus[3]) | set(minus[3])
        dT3.append(
            SymTensor3.from_entries(
                model.n,
                [
                    (*key, (plus[3].get(key, 0.0) - minus[3].get(key, 0.0)) / (2 * h))
                    for key in keys3
                ],
            )
        )
    derivs = ParamDerivatives(
        names=tuple(params), dM=tuple(dM), dK=tuple(dK), dT2=tuple(dT2), dT3=tuple(dT3)
    )
    return model, derivs


def vk_center_dof(spec: VkBeamSpec) -> int:
    """Free-DOF index of the transverse displacement at the beam midpoint node."""
    if spec.n_elements % 2 != 0:
        raise ConfigError("center DOF requires an even element count")
    center_node = spec.n_elements // 2
    return 3 * (center_node - 1) + 1  # node 0 is clamped away


def build_vk_beam_at(spec: VkBeamSpec, mu: np.ndarray, params: tuple[str, ...]) -> VkBeamSpec:
    """Spec with the named parameters replaced by the entries of mu."""
    updates = {VK_PARAM_FIELDS[p]: float(v) for p, v in zip(params, mu)}
    return replace(spec, **updates)


# -- catalog -----------------------------------------------------------------


def model_catalog() -> dict:
    """Named builder registry used by the CLI config resolution."""
    return {
        "chain2": lambda: build_chain(ChainSpec()),
        "duffing1": lambda: build_chain(
            ChainSpec(n_masses=1, mass=1.0, k=1.0, k2=0.0, k3=0.1, alpha_r=0.0, beta_r=0.0),
            params=("k", "k3"),
        ),
        "vk_beam10": lambda: build_vk_beam(VkBeamSpec()),
    }


def build_named(name: str):
    cat = model_catalog()
    if name not in cat:
        raise ConfigError(f"unknown model id {name!r}; known: {sorted(cat)}")
    return cat[name]()
