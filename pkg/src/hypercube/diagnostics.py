"""Numeric structure checks on a factorization of a Cayley table.

Every quantity is a raw residual; thresholds belong to the caller. Anything
that cannot be computed (a degenerate slice, a factorization that refuses to
synchronize) is reported as ``None`` and explained in ``flags``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .algebra import CayleyTable, assoc_report, cayley_tensor, to_loop_isotope
from .matrix_kernel import numerical_rank, stack_norm_sq
from .model import (
    DegenerateSlice,
    DegenerateTriple,
    FactorSet,
    NotSynchronizable,
    base_term_B,
    characters,
    contract,
    gram_triple,
    isotopy_for_factors,
    kappa_values,
    misalignment_R,
    mode1_unfolding,
    permute_factors,
    synchronize,
    unitarity_distance,
)

DEFAULT_C = 0.28
EVIDENCE = "group_isotope_evidence"
INCONCLUSIVE = "inconclusive"


@dataclass
class StructureReport:
    collinearity: float | None
    unitarity_distance: float
    kappa_mean: float | None
    kappa_spread: float | None
    gram_spread: float | None
    gram_rank: int | None
    character_residual: float | None
    homomorphism_residual: float | None
    amgm_gap: float | None
    dominance_margin: float | None
    unfolding_rank: int
    c: float
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, float) and not math.isfinite(value):
                value = None
            out[key] = value
        return out


@dataclass(frozen=True)
class GroupVerdict:
    verdict: str
    collinearity: float | None
    unitarity_distance: float
    feas_residual: float
    combinatorial_group: bool
    agreement: bool

    def to_json(self) -> dict:
        return asdict(self)


def unfolding_rank(tensor: np.ndarray, tol: float = 1e-8) -> int:
    """Numerical rank of the mode-1 unfolding (rows ``a``, columns ``(b, c)``)."""
    return numerical_rank(mode1_unfolding(tensor), tol=tol)


def amgm_gap(theta: FactorSet, t: CayleyTable) -> float:
    """``B - 3 * sum kappa^(-1/3) |T|^(4/3)`` over supported triples.

    Each triple's contribution to ``B`` is ``|T|^2`` times a sum of three
    inverse slice norms, which is at least three times their geometric mean;
    the gap is therefore nonnegative and vanishes exactly when the three
    norms agree on every triple.
    """
    B, _ = base_term_B(theta, t)
    kap = kappa_values(theta, t)
    Tabs = np.abs(contract(theta)[tuple(_support(t))])
    return B - 3.0 * float((kap ** (-1.0 / 3.0) * Tabs ** (4.0 / 3.0)).sum())


def _support(t: CayleyTable):
    n = t.n
    a, b = np.divmod(np.arange(n * n), n)
    return a, b, t.cells[a, b]


def homomorphism_residual(rho: np.ndarray, loop: CayleyTable) -> float:
    """``max ||rho(a) rho(b) - rho(a o b)||`` (normalized norm) over all pairs."""
    a, b, c = _support(loop)
    diff = rho[a] @ rho[b] - rho[c]
    return float(np.sqrt(stack_norm_sq(diff).max()))


def character_residual(rho: np.ndarray) -> float:
    """``max_g |Tr rho(g) - n [g = e]|`` with the identity at index 0."""
    n = rho.shape[0]
    target = np.zeros(n)
    target[0] = n
    return float(np.abs(characters(rho) - target).max())


def _loop_view(theta: FactorSet, t: CayleyTable) -> tuple[FactorSet, CayleyTable]:
    loop, triple = to_loop_isotope(t)
    if loop is t:
        return theta, t
    return permute_factors(theta, *isotopy_for_factors(*triple)), loop


def structure_report(
    theta: FactorSet, t: CayleyTable, c: float = DEFAULT_C, sync_tol: float = 1e-3
) -> StructureReport:
    """Collect every structure residual of ``theta`` against table ``t``.

    Tables without identity 0 are first moved to their principal loop
    isotope (factors permuted alongside) so that synchronization applies.
    """
    if not 0.0 <= c < 1.0:
        raise ValueError(f"c must lie in [0, 1), got {c}")
    if theta.n != t.n:
        raise ValueError(f"factor size {theta.n} does not match table order {t.n}")
    n = t.n
    flags: list[str] = []
    rep = dict(
        collinearity=None, kappa_mean=None, kappa_spread=None, gram_spread=None,
        gram_rank=None, character_residual=None, homomorphism_residual=None,
        amgm_gap=None, dominance_margin=None,
    )
    try:
        B, _ = base_term_B(theta, t)
        R, _ = misalignment_R(theta, t)
        rep["collinearity"] = R / n**2
        rep["dominance_margin"] = B - 3 * n**2 + c * R
        g = gram_triple(theta, t)
        rep["gram_spread"] = g.spread
        rep["gram_rank"] = numerical_rank(g.X, tol=1e-6)
    except DegenerateSlice as exc:
        flags.append(f"degenerate_slice:{exc}")
    try:
        kap = kappa_values(theta, t)
        rep["kappa_mean"] = float(kap.mean())
        rep["kappa_spread"] = float(np.abs(kap - kap.mean()).max())
        if rep["collinearity"] is not None:
            rep["amgm_gap"] = amgm_gap(theta, t)
    except DegenerateTriple as exc:
        flags.append(f"degenerate_triple:{exc}")

    loop_theta, loop = _loop_view(theta, t)
    try:
        rho = synchronize(loop_theta, loop, tol=sync_tol).rho
        rep["character_residual"] = character_residual(rho)
        rep["homomorphism_residual"] = homomorphism_residual(rho, loop)
    except NotSynchronizable as exc:
        flags.append(f"not_synchronizable:{exc}")

    return StructureReport(
        unitarity_distance=unitarity_distance(theta),
        unfolding_rank=unfolding_rank(contract(theta)),
        c=c,
        flags=flags,
        **rep,
    )


def check_quasigroup_to_group(theta: FactorSet, t: CayleyTable, tol: float = 1e-3) -> GroupVerdict:
    """Numerical evidence that ``t`` is a group isotope, cross-checked combinatorially.

    The verdict is evidence iff the factorization is feasible, collinear and
    unitary, each within ``tol``. Independently, the principal loop isotope
    of ``t`` is tested for associativity; ``agreement`` says whether both
    routes reach the same answer. A non-group table can only ever be
    inconclusive: a failed search proves nothing.
    """
    feas = float(np.abs(contract(theta) - cayley_tensor(t)).max())
    try:
        R, _ = misalignment_R(theta, t)
        coll: float | None = R / t.n**2
    except DegenerateSlice:
        coll = None
    ud = unitarity_distance(theta)
    evidence = feas <= tol and coll is not None and coll < tol and ud < tol
    is_group = assoc_report(to_loop_isotope(t)[0]).is_group
    return GroupVerdict(
        verdict=EVIDENCE if evidence else INCONCLUSIVE,
        collinearity=coll,
        unitarity_distance=ud,
        feas_residual=feas,
        combinatorial_group=is_group,
        agreement=evidence == is_group,
    )
