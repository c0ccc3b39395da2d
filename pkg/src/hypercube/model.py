"""HyperCube contraction, objective, and its base/misalignment decomposition.

A factorization is three stacks of ``n`` complex ``n x n`` slices and models a
Cayley table through ``T[a, b, c] = Tr(A_a B_b C_c) / n``. The regularizer
``H`` sums the squared normalized norms of all pairwise slice products; on a
Latin square it splits exactly as ``H = B + R`` where ``B`` depends only on
``|T|`` and slice scales and ``R >= 0`` measures how far each Jacobian is from
being collinear with its slice.

Per-triple quantities always iterate the supported triples row-major:
``a`` outer, ``b`` inner, ``c = t[a][b]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import CayleyTable, assoc_report, inverse_perm
from .matrix_kernel import dagger, nearest_unitary, stack_norm_sq

__all__ = [
    "DEGENERACY_FLOOR",
    "ModelError",
    "DegenerateSlice",
    "DegenerateTriple",
    "NotAGroup",
    "NonUnitaryGauge",
    "NotSynchronizable",
    "FactorSet",
    "GramTriple",
    "RepMap",
    "TripleTerms",
    "DecompositionReport",
    "contract",
    "objective_H",
    "objective_H_supported",
    "base_term_B",
    "misalignment_R",
    "misalignment_matrices",
    "kappa_values",
    "gram_triple",
    "decompose",
    "regular_rep",
    "regular_rep_factors",
    "apply_gauge",
    "permute_factors",
    "unitarity_distance",
    "synchronize",
    "mode1_unfolding",
    "characters",
    "isotopy_for_factors",
]

DEGENERACY_FLOOR = 1e-12


class ModelError(ValueError):
    pass


class DegenerateSlice(ModelError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"DegenerateSlice: {which} has squared norm below {DEGENERACY_FLOOR:g}")


class DegenerateTriple(ModelError):
    def __init__(self, triple: tuple[int, int, int]):
        self.triple = triple
        super().__init__(f"DegenerateTriple: |T{triple}| below {DEGENERACY_FLOOR:g}")


class NotAGroup(ModelError):
    pass


class NonUnitaryGauge(ModelError):
    pass


class NotSynchronizable(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Parameters ``(A, B, C)``, each an array of shape ``(n, n, n)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.A), np.shape(self.B), np.shape(self.C)}
        if len(shapes) != 1:
            raise ModelError(f"factor stacks differ in shape: {shapes}")
        shape = shapes.pop()
        if len(shape) != 3 or shape[0] != shape[1] or shape[1] != shape[2]:
            raise ModelError(f"expected stacks of shape (n, n, n), got {shape}")
        for name in "ABC":
            arr = np.asarray(getattr(self, name), dtype=np.complex128)
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"factor {name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def stacks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.A, self.B, self.C

    def copy(self) -> "FactorSet":
        return FactorSet(self.A.copy(), self.B.copy(), self.C.copy())

    def to_json(self) -> dict:
        return {
            name: {"re": getattr(self, name).real.tolist(), "im": getattr(self, name).imag.tolist()}
            for name in "ABC"
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FactorSet":
        return cls(*(np.asarray(obj[k]["re"]) + 1j * np.asarray(obj[k]["im"]) for k in "ABC"))


@dataclass
class GramTriple:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    spread: float


@dataclass
class RepMap:
    n: int
    rho: np.ndarray  # (n, n, n), rho[g]
    source_gauge: tuple[np.ndarray, np.ndarray, np.ndarray]
    agreement: float  # max deviation among A', B', C'^dag


@dataclass(frozen=True)
class TripleTerms:
    triple: tuple[int, int, int]
    T: complex
    delta_norms: tuple[float, float, float]
    kappa: float | None
    slice_norms: tuple[float, float, float]


@dataclass
class DecompositionReport:
    H: float
    B: float
    R: float
    per_triple: list[TripleTerms]
    gram: GramTriple | None = None
    flags: list[str] = field(default_factory=list)


def _check_table(theta: FactorSet, t: CayleyTable) -> None:
    if theta.n != t.n:
        raise ModelError(f"factor order {theta.n} does not match table order {t.n}")


def _supported(t: CayleyTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, b = np.meshgrid(np.arange(t.n), np.arange(t.n), indexing="ij")
    a, b = a.ravel(), b.ravel()
    return a, b, t.cells[a, b]


def contract(theta: FactorSet) -> np.ndarray:
    """The tensor ``T[a, b, c] = Tr(A_a B_b C_c) / n``, shape ``(n, n, n)``."""
    A, B, C = theta.stacks()
    n = theta.n
    AB = A[:, None] @ B[None, :]
    # Tr(M C_c) = sum_ik M_ik C_c[k, i]. Every entry is reduced in the same
    # order wherever it sits, so permuting slices permutes T bit for bit.
    return np.einsum("abik,cki->abc", AB, C) / n


def _gram_sums(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``sum_i X_i X_i^dag`` and ``sum_i X_i^dag X_i``."""
    return (X @ dagger(X)).sum(axis=0), (dagger(X) @ X).sum(axis=0)


def objective_H(theta: FactorSet) -> float:
    """Sum of ``||B_b C_c||^2 + ||C_c A_a||^2 + ||A_a B_b||^2`` over all index pairs.

    Evaluated through slice Gram sums: ``sum_ab ||A_a B_b||^2 =
    Tr(Q_A P_B) / n`` with ``P_X = sum X X^dag`` and ``Q_X = sum X^dag X``.
    """
    A, B, C = theta.stacks()
    n = theta.n
    PA, QA = _gram_sums(A)
    PB, QB = _gram_sums(B)
    PC, QC = _gram_sums(C)
    total = np.vdot(QB, PC) + np.vdot(QC, PA) + np.vdot(QA, PB)
    return float(total.real / n)


def _pair_products(theta: FactorSet, t: CayleyTable):
    A, B, C = theta.stacks()
    a, b, c = _supported(t)
    return A[a], B[b], C[c], (a, b, c)


def objective_H_supported(theta: FactorSet, t: CayleyTable) -> float:
    """``H`` summed over supported triples; equals :func:`objective_H` on Latin tables."""
    _check_table(theta, t)
    Aa, Bb, Cc, _ = _pair_products(theta, t)
    total = stack_norm_sq(Bb @ Cc) + stack_norm_sq(Cc @ Aa) + stack_norm_sq(Aa @ Bb)
    return float(total.sum())


def _slice_norms(theta: FactorSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return stack_norm_sq(theta.A), stack_norm_sq(theta.B), stack_norm_sq(theta.C)


def _require_nondegenerate(theta: FactorSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # every slice appears in some supported triple of a Latin square
    norms = _slice_norms(theta)
    for name, vals in zip("ABC", norms):
        bad = np.flatnonzero(vals <= DEGENERACY_FLOOR)
        if bad.size:
            raise DegenerateSlice(f"{name}_{int(bad[0])}")
    return norms


def _supported_T(theta: FactorSet, t: CayleyTable) -> np.ndarray:
    a, b, c = _supported(t)
    return contract(theta)[a, b, c]


def base_term_B(theta: FactorSet, t: CayleyTable) -> tuple[float, np.ndarray]:
    """Cauchy-Schwarz lower bound of ``H``; returns ``(B, per-triple terms)``.

    Raises:
        DegenerateSlice: a slice has squared norm at or below the floor.
    """
    _check_table(theta, t)
    nA, nB, nC = _require_nondegenerate(theta)
    a, b, c = _supported(t)
    T = _supported_T(theta, t)
    per = np.abs(T) ** 2 * (1 / nA[a] + 1 / nB[b] + 1 / nC[c])
    return float(per.sum()), per


def misalignment_matrices(theta: FactorSet, t: CayleyTable):
    """Per-triple misalignment matrices, each stack of shape ``(n^2, n, n)``.

    ``D_A = (conj(T) / ||A_a||^2) A_a - (B_b C_c)^dag`` and cyclically for B, C.
    """
    _check_table(theta, t)
    nA, nB, nC = _require_nondegenerate(theta)
    Aa, Bb, Cc, (a, b, c) = _pair_products(theta, t)
    Tc = np.conj(_supported_T(theta, t))[:, None, None]
    DA = (Tc / nA[a][:, None, None]) * Aa - dagger(Bb @ Cc)
    DB = (Tc / nB[b][:, None, None]) * Bb - dagger(Cc @ Aa)
    DC = (Tc / nC[c][:, None, None]) * Cc - dagger(Aa @ Bb)
    return DA, DB, DC


def misalignment_R(theta: FactorSet, t: CayleyTable) -> tuple[float, np.ndarray]:
    """``R = H - B`` computed directly from the misalignment matrices.

    Returns ``(R, per-triple norms)`` with the norms shaped ``(n^2, 3)``.
    """
    DA, DB, DC = misalignment_matrices(theta, t)
    norms = np.stack([stack_norm_sq(DA), stack_norm_sq(DB), stack_norm_sq(DC)], axis=1)
    return float(norms.sum()), norms


def kappa_values(theta: FactorSet, t: CayleyTable) -> np.ndarray:
    """Rescale-invariant ratio ``||A_a||^2 ||B_b||^2 ||C_c||^2 / |T_abc|^2`` per triple."""
    _check_table(theta, t)
    nA, nB, nC = _slice_norms(theta)
    a, b, c = _supported(t)
    T2 = np.abs(_supported_T(theta, t)) ** 2
    small = np.flatnonzero(np.sqrt(T2) <= DEGENERACY_FLOOR)
    if small.size:
        k = int(small[0])
        raise DegenerateTriple((int(a[k]), int(b[k]), int(c[k])))
    return nA[a] * nB[b] * nC[c] / T2


def gram_triple(theta: FactorSet, t: CayleyTable) -> GramTriple:
    """Mean normalized Gram matrices and their largest per-triple deviation.

    Each supported triple offers two estimates of each Gram matrix, e.g.
    ``A_a A_a^dag / ||A_a||^2`` and ``C_c^dag C_c / ||C_c||^2`` for ``X``.
    """
    _check_table(theta, t)
    nA, nB, nC = _require_nondegenerate(theta)
    Aa, Bb, Cc, (a, b, c) = _pair_products(theta, t)
    w = lambda v: v[:, None, None]  # noqa: E731
    cand_X = np.concatenate([Aa @ dagger(Aa) / w(nA[a]), dagger(Cc) @ Cc / w(nC[c])])
    cand_Y = np.concatenate([Bb @ dagger(Bb) / w(nB[b]), dagger(Aa) @ Aa / w(nA[a])])
    cand_Z = np.concatenate([Cc @ dagger(Cc) / w(nC[c]), dagger(Bb) @ Bb / w(nB[b])])
    means = [cand.mean(axis=0) for cand in (cand_X, cand_Y, cand_Z)]
    spread = max(float(np.abs(cand - m).max()) for cand, m in zip((cand_X, cand_Y, cand_Z), means))
    return GramTriple(*means, spread=spread)


def decompose(theta: FactorSet, t: CayleyTable, with_gram: bool = True) -> DecompositionReport:
    """Full decomposition report with per-triple terms.

    Degenerate kappa values are reported as ``None`` with a flag instead of
    aborting; degenerate slices still raise because ``B`` is undefined.
    """
    _check_table(theta, t)
    H = objective_H(theta)
    B, _ = base_term_B(theta, t)
    R, dnorms = misalignment_R(theta, t)
    nA, nB, nC = _slice_norms(theta)
    a, b, c = _supported(t)
    T = _supported_T(theta, t)
    flags = []
    with np.errstate(divide="ignore"):
        kap = nA[a] * nB[b] * nC[c] / np.abs(T) ** 2
    per = []
    for k in range(len(a)):
        kv: float | None = float(kap[k])
        if abs(T[k]) <= DEGENERACY_FLOOR:
            kv = None
            flags.append(f"degenerate_triple:{a[k]},{b[k]},{c[k]}")
        per.append(
            TripleTerms(
                triple=(int(a[k]), int(b[k]), int(c[k])),
                T=complex(T[k]),
                delta_norms=tuple(float(x) for x in dnorms[k]),
                kappa=kv,
                slice_norms=(float(nA[a[k]]), float(nB[b[k]]), float(nC[c[k]])),
            )
        )
    gram = gram_triple(theta, t) if with_gram else None
    return DecompositionReport(H=H, B=B, R=R, per_triple=per, gram=gram, flags=flags)


# --- certificates and symmetries ----------------------------------------------


def regular_rep(g: CayleyTable) -> np.ndarray:
    """Left-regular permutation matrices: ``rho[g] e_x = e_{g o x}``."""
    n = g.n
    rho = np.zeros((n, n, n), dtype=np.complex128)
    x = np.arange(n)
    for el in range(n):
        rho[el, g.cells[el, x], x] = 1.0
    return rho


def regular_rep_factors(g: CayleyTable) -> FactorSet:
    """Certificate ``A_g = B_g = C_g^dag = rho_r(g)`` for a group table.

    Raises:
        NotAGroup: the table is not a group with identity 0.
    """
    rep = assoc_report(g)
    if not rep.is_group:
        raise NotAGroup(f"table is not a group (n_v={rep.n_v}, identity={rep.identity})")
    rho = regular_rep(g)
    return FactorSet(rho, rho.copy(), dagger(rho))


def unitarity_distance(theta: FactorSet) -> float:
    """``max ||X^dag X - I||_max`` over all ``3n`` slices."""
    eye = np.eye(theta.n)
    return max(float(np.abs(dagger(X) @ X - eye).max()) for X in theta.stacks())


def apply_gauge(theta: FactorSet, U, V, W, tol: float = 1e-8) -> FactorSet:
    """``(A, B, C) -> (U A V^dag, V B W^dag, W C U^dag)``.

    Raises:
        NonUnitaryGauge: any of ``U, V, W`` deviates from unitarity by more
            than ``tol`` (entrywise).
    """
    n = theta.n
    eye = np.eye(n)
    mats = []
    for name, M in zip("UVW", (U, V, W)):
        M = np.asarray(M, dtype=np.complex128)
        if M.shape != (n, n):
            raise ModelError(f"gauge {name} has shape {M.shape}, expected {(n, n)}")
        if np.abs(dagger(M) @ M - eye).max() > tol:
            raise NonUnitaryGauge(f"gauge matrix {name} is not unitary within {tol:g}")
        mats.append(M)
    U, V, W = mats
    return FactorSet(U @ theta.A @ dagger(V), V @ theta.B @ dagger(W), W @ theta.C @ dagger(U))


def permute_factors(theta: FactorSet, phi, psi, chi) -> FactorSet:
    """``A'_a = A_phi(a)``, ``B'_b = B_psi(b)``, ``C'_c = C_chi(c)``.

    Then ``T'[a, b, c] = T[phi(a), psi(b), chi(c)]``, so if ``theta``
    factorizes ``t`` the result factorizes
    ``apply_isotopy(t, phi^-1, psi^-1, chi^-1)``.
    """
    n = theta.n
    perms = []
    for p in (phi, psi, chi):
        arr = np.asarray(p, dtype=np.int64)
        if arr.shape != (n,) or not np.array_equal(np.sort(arr), np.arange(n)):
            raise ModelError(f"not a permutation of size {n}")
        perms.append(arr)
    return FactorSet(theta.A[perms[0]], theta.B[perms[1]], theta.C[perms[2]])


def synchronize(
    theta: FactorSet,
    t: CayleyTable,
    tol: float = 1e-3,
    agreement_tol: float | None = None,
) -> RepMap:
    """Collapse a unitary collinear factorization of a loop onto one map ``rho``.

    Uses the gauge ``(U, V, W) = (A_0^dag, I, B_0)`` with 0 the loop identity;
    ``A_0`` and ``B_0`` are first projected to their nearest unitaries so the
    gauge is exactly unitary. Returns ``rho(g) = A'_g``.

    Raises:
        NotSynchronizable: ``t`` is not a loop, the factors are further than
            ``tol`` from unitary or collinear (``R / n^2``), or the gauged
            stacks disagree by more than ``agreement_tol`` (default
            ``max(10 * sqrt(tol), 1e-8)``).
    """
    _check_table(theta, t)
    if not t.is_loop():
        raise NotSynchronizable("table is not a loop with identity 0")
    ud = unitarity_distance(theta)
    if ud > tol:
        raise NotSynchronizable(f"unitarity distance {ud:.3g} exceeds {tol:g}")
    try:
        R, _ = misalignment_R(theta, t)
    except DegenerateSlice as exc:
        raise NotSynchronizable(str(exc)) from exc
    coll = R / t.n**2
    if coll > tol:
        raise NotSynchronizable(f"collinearity residual {coll:.3g} exceeds {tol:g}")
    U = nearest_unitary(dagger(theta.A[0]))
    W = nearest_unitary(theta.B[0])
    V = np.eye(t.n, dtype=np.complex128)
    gauged = apply_gauge(theta, U, V, W)
    rho = gauged.A
    agree = max(
        float(np.abs(gauged.B - rho).max()),
        float(np.abs(dagger(gauged.C) - rho).max()),
    )
    limit = max(10 * np.sqrt(tol), 1e-8) if agreement_tol is None else agreement_tol
    if agree > limit:
        raise NotSynchronizable(f"gauged factors disagree by {agree:.3g} (limit {limit:g})")
    return RepMap(n=t.n, rho=rho, source_gauge=(U, V, W), agreement=agree)


def mode1_unfolding(tensor: np.ndarray) -> np.ndarray:
    """Rows indexed by ``a``, columns by ``(b, c)``."""
    n = tensor.shape[0]
    return np.asarray(tensor).reshape(n, -1)


def characters(rho: np.ndarray) -> np.ndarray:
    return np.trace(rho, axis1=-2, axis2=-1)


def isotopy_for_factors(phi, psi, chi):
    """Permutations to pass to :func:`permute_factors` so the result factorizes
    ``apply_isotopy(t, phi, psi, chi)``."""
    return inverse_perm(phi), inverse_perm(psi), inverse_perm(chi)

