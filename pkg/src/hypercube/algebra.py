"""Finite binary operations stored as Cayley tables.

Elements are the integers ``0..n-1``. A :class:`CayleyTable` is always a
validated Latin square (a quasigroup); loops additionally use ``0`` as the
two-sided identity.

Permutations are sequences ``p`` with ``p[i]`` the image of ``i``.

Isotopy convention
------------------
``apply_isotopy(t, phi, psi, chi)`` returns ``t'`` with::

    t'[phi(a)][psi(b)] = chi(t[a][b])   i.e.  t'[a][b] = chi(t[phi^-1(a)][psi^-1(b)])

so rows, columns and symbols are *relabelled* by the three permutations. It
is a left action: applying ``g`` then ``h`` equals applying the
componentwise composition ``h o g``. Worked example on Z3 with
``phi = (1, 2, 0)``, ``psi = chi = id``::

    t  = [[0,1,2],      t' = [[2,0,1],
          [1,2,0],            [0,1,2],
          [2,0,1]]            [1,2,0]]

Row ``0`` of ``t`` moved to row ``phi(0) = 1`` and so on.
"""

from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AlgebraError",
    "LatinViolation",
    "NotALoop",
    "UnknownGroup",
    "CayleyTable",
    "AlgebraReport",
    "validate_latin",
    "assoc_report",
    "apply_isotopy",
    "relabel",
    "to_loop_isotope",
    "canonical_loop_form",
    "canonical_hash",
    "group_table",
    "inverse_perm",
    "compose_perm",
    "format_table",
    "parse_table",
    "read_table",
    "write_table",
    "read_tables",
    "cayley_tensor",
]


class AlgebraError(ValueError):
    pass


class LatinViolation(AlgebraError):
    """A row or column of a candidate table is not a permutation."""

    def __init__(self, axis: str, index: int, detail: str = ""):
        self.axis = axis
        self.index = index
        msg = f"LatinViolation: {axis} {index} is not a permutation of 0..n-1"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NotALoop(AlgebraError):
    pass


class UnknownGroup(AlgebraError):
    pass


@dataclass(frozen=True, eq=False)
class CayleyTable:
    cells: np.ndarray
    label: str | None = None

    @property
    def n(self) -> int:
        return int(self.cells.shape[0])

    def __getitem__(self, a: int) -> np.ndarray:
        return self.cells[a]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CayleyTable):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self) -> int:
        return hash(self.cells.tobytes())

    def tolist(self) -> list[list[int]]:
        return self.cells.tolist()

    def is_loop(self) -> bool:
        """True when 0 is a two-sided identity (reduced form)."""
        ident = np.arange(self.n)
        return bool(np.array_equal(self.cells[0], ident) and np.array_equal(self.cells[:, 0], ident))

    def __repr__(self) -> str:
        lab = f", label={self.label!r}" if self.label else ""
        return f"CayleyTable(n={self.n}{lab}, cells={self.tolist()})"


@dataclass(frozen=True)
class AlgebraReport:
    n_v: int
    n_v_norm: float
    identity: int | None
    is_group: bool


def _freeze(cells: np.ndarray) -> np.ndarray:
    cells = np.array(cells, dtype=np.int64, copy=True)
    cells.flags.writeable = False
    return cells


def validate_latin(cells, label: str | None = None) -> CayleyTable:
    """Validate a square grid and wrap it as a :class:`CayleyTable`.

    Raises:
        AlgebraError: the grid is not square or has out-of-range entries.
        LatinViolation: the first row or column (rows checked first) that
            repeats a symbol.
    """
    try:
        arr = np.asarray(cells)
    except Exception as exc:  # ragged nested lists
        raise AlgebraError(f"cells are not a rectangular grid: {exc}") from exc
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise AlgebraError(f"expected a non-empty square grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise AlgebraError("cells must be integers")
        arr = arr.astype(np.int64)
    n = arr.shape[0]
    if arr.min() < 0 or arr.max() >= n:
        raise AlgebraError(f"entries must lie in [0, {n})")
    full = np.arange(n)
    for i in range(n):
        if not np.array_equal(np.sort(arr[i]), full):
            raise LatinViolation("row", i)
    for j in range(n):
        if not np.array_equal(np.sort(arr[:, j]), full):
            raise LatinViolation("column", j)
    return CayleyTable(_freeze(arr), label)


def _trusted(cells: np.ndarray, label: str | None = None) -> CayleyTable:
    # for tables that are Latin by construction
    return CayleyTable(_freeze(cells), label)


def assoc_report(t: CayleyTable) -> AlgebraReport:
    """Count associativity violations over all n^3 triples."""
    c = t.cells
    n = t.n
    idx = np.arange(n)
    lhs = c[c[:, :, None], idx[None, None, :]]  # (a o b) o c
    rhs = c[idx[:, None, None], c[None, :, :]]  # a o (b o c)
    n_v = int(np.count_nonzero(lhs != rhs))
    full = np.arange(n)
    identity = None
    for e in range(n):
        if np.array_equal(c[e], full) and np.array_equal(c[:, e], full):
            identity = e
            break
    return AlgebraReport(
        n_v=n_v,
        n_v_norm=n_v / n**2,
        identity=identity,
        is_group=identity is not None and n_v == 0,
    )


def _as_perm(p: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(p, dtype=np.int64)
    if arr.shape != (n,) or not np.array_equal(np.sort(arr), np.arange(n)):
        raise AlgebraError(f"not a permutation of size {n}: {list(p)}")
    return arr


def inverse_perm(p: Sequence[int]) -> np.ndarray:
    return np.argsort(np.asarray(p, dtype=np.int64))


def compose_perm(p: Sequence[int], q: Sequence[int]) -> np.ndarray:
    """``(p o q)(i) = p[q[i]]``."""
    return np.asarray(p, dtype=np.int64)[np.asarray(q, dtype=np.int64)]


def apply_isotopy(t: CayleyTable, phi, psi, chi) -> CayleyTable:
    """Relabel rows by ``phi``, columns by ``psi`` and symbols by ``chi``."""
    n = t.n
    phi, psi, chi = (_as_perm(p, n) for p in (phi, psi, chi))
    pinv, qinv = inverse_perm(phi), inverse_perm(psi)
    new = chi[t.cells[np.ix_(pinv, qinv)]]
    return _trusted(new, t.label)


def relabel(t: CayleyTable, sigma) -> CayleyTable:
    """Isomorphic image under the simultaneous relabelling ``sigma``."""
    return apply_isotopy(t, sigma, sigma, sigma)


def to_loop_isotope(t: CayleyTable) -> tuple[CayleyTable, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Principal loop isotope with identity 0.

    Uses ``x * y = (x / b) o (a \\ y)`` with ``a = b = 0`` (identity
    ``t[0][0]``), then swaps that identity with 0. Returns the loop and the
    isotopy triple mapping ``t`` onto it.
    """
    n = t.n
    c = t.cells
    if t.is_loop():
        ident = np.arange(n)
        return t, (ident, ident.copy(), ident.copy())
    phi = c[:, 0].copy()  # z -> z o 0
    psi = c[0, :].copy()  # w -> 0 o w
    e = int(c[0, 0])
    sigma = np.arange(n)
    sigma[[0, e]] = sigma[[e, 0]]
    triple = (compose_perm(sigma, phi), compose_perm(sigma, psi), sigma)
    loop = apply_isotopy(t, *triple)
    assert loop.is_loop()
    return loop, triple


@lru_cache(maxsize=None)
def _perms_fixing_zero(n: int) -> tuple[np.ndarray, np.ndarray]:
    rest = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64).reshape(-1, n - 1)
    perms = np.concatenate([np.zeros((rest.shape[0], 1), dtype=np.int64), rest], axis=1)
    invs = np.argsort(perms, axis=1)
    return perms, invs


def _hash_cells(cells: np.ndarray) -> int:
    data = np.ascontiguousarray(cells, dtype=np.uint8).tobytes()
    data = bytes([cells.shape[0]]) + data
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def canonical_hash(t: CayleyTable) -> int:
    """Stable unsigned 64-bit hash of the canonical form."""
    return canonical_loop_form(t)[1]


def canonical_loop_form(t: CayleyTable) -> tuple[CayleyTable, int]:
    """Lexicographically minimal isomorph over relabellings fixing 0.

    Brute force over all ``(n-1)!`` permutations; intended for ``n <= 8``.
    """
    if not t.is_loop():
        raise NotALoop("canonical_loop_form requires a loop with identity 0")
    n = t.n
    if n <= 2:
        return t, _hash_cells(t.cells)
    perms, invs = _perms_fixing_zero(n)
    c = t.cells
    # relabelled[k, x, y] = p_k[c[inv_k[x], inv_k[y]]]
    inner = c[invs[:, :, None], invs[:, None, :]]
    relabelled = np.take_along_axis(perms, inner.reshape(len(perms), -1), axis=1)
    # lexicographic argmin: column-wise candidate filtering
    cand = np.arange(len(perms))
    for col in range(n + 1, n * n):
        vals = relabelled[cand, col]
        cand = cand[vals == vals.min()]
        if cand.size == 1:
            break
    best = relabelled[cand[0]].reshape(n, n)
    return _trusted(best, t.label), _hash_cells(best)


# --- group constructors -------------------------------------------------------


def _from_elements(elems: list, op) -> np.ndarray:
    index = {e: i for i, e in enumerate(elems)}
    n = len(elems)
    out = np.empty((n, n), dtype=np.int64)
    for i, x in enumerate(elems):
        for j, y in enumerate(elems):
            out[i, j] = index[op(x, y)]
    return out


def _cyclic(k: int) -> np.ndarray:
    a = np.arange(k)
    return (a[:, None] + a[None, :]) % k


def _symmetric(k: int) -> np.ndarray:
    elems = list(itertools.permutations(range(k)))  # identity first
    return _from_elements(elems, lambda p, q: tuple(p[q[i]] for i in range(k)))


def _dihedral(k: int) -> np.ndarray:
    # (r, s) = rotation^r reflection^s, order 2k, identity (0, 0)
    elems = [(r, s) for s in (0, 1) for r in range(k)]

    def op(x, y):
        r1, s1 = x
        r2, s2 = y
        return ((r1 + (-r2 if s1 else r2)) % k, s1 ^ s2)

    return _from_elements(elems, op)


def _quaternion() -> np.ndarray:
    # units 1, i, j, k with a sign; identity (+1, 1)
    mult = {
        ("1", u): (1, u) for u in "1ijk"
    } | {
        (u, "1"): (1, u) for u in "1ijk"
    } | {
        ("i", "i"): (-1, "1"), ("j", "j"): (-1, "1"), ("k", "k"): (-1, "1"),
        ("i", "j"): (1, "k"), ("j", "k"): (1, "i"), ("k", "i"): (1, "j"),
        ("j", "i"): (-1, "k"), ("k", "j"): (-1, "i"), ("i", "k"): (-1, "j"),
    }
    elems = [(s, u) for s in (1, -1) for u in "1ijk"]

    def op(x, y):
        sign, unit = mult[(x[1], y[1])]
        return (x[0] * y[0] * sign, unit)

    return _from_elements(elems, op)


def _direct_product(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    m, k = len(g), len(h)
    out = np.empty((m * k, m * k), dtype=np.int64)
    for a in range(m * k):
        for b in range(m * k):
            out[a, b] = g[a // k, b // k] * k + h[a % k, b % k]
    return out


_FACTOR = re.compile(r"^(?:Zn:(\d+)|Z(\d+)\^(\d+)|Z(\d+)|S(\d+)|D(\d+)|Q8)$")


def _factor_table(token: str) -> np.ndarray:
    m = _FACTOR.match(token)
    if not m:
        raise UnknownGroup(f"unknown group factor {token!r}")
    zn, zp_base, zp_exp, z, s, d = m.groups()
    if zn or z:
        k = int(zn or z)
        if k < 1:
            raise UnknownGroup(token)
        return _cyclic(k)
    if zp_base:
        base, exp = int(zp_base), int(zp_exp)
        if base < 1 or exp < 1:
            raise UnknownGroup(token)
        out = _cyclic(base)
        for _ in range(exp - 1):
            out = _direct_product(out, _cyclic(base))
        return out
    if s:
        k = int(s)
        if not 1 <= k <= 5:
            raise UnknownGroup(f"{token}: symmetric groups supported up to S5")
        return _symmetric(k)
    if d:
        k = int(d)
        if k < 1:
            raise UnknownGroup(token)
        return _dihedral(k)
    return _quaternion()


def group_table(spec: str) -> CayleyTable:
    """Standard Cayley table of a named group.

    ``spec`` is one factor or several joined by ``x``: ``Zn:k`` (or ``Zk``),
    ``Z2^k``, ``Sk``, ``Dk`` (dihedral of order ``2k``), ``Q8``. For example
    ``"Z2xZ4"`` or ``"Zn:2 x S3"``. Element 0 is always the identity.
    """
    tokens = re.split(r"\s*[x×]\s*", spec.strip())
    if not all(tokens):
        raise UnknownGroup(f"malformed group spec {spec!r}")
    cells = _factor_table(tokens[0])
    for tok in tokens[1:]:
        cells = _direct_product(cells, _factor_table(tok))
    return _trusted(cells, spec.strip())


def cayley_tensor(t: CayleyTable) -> np.ndarray:
    """The 0/1 structure tensor ``delta[a, b, c] = [a o b == c]``."""
    n = t.n
    d = np.zeros((n, n, n))
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    d[a, b, t.cells] = 1.0
    return d


# --- text format --------------------------------------------------------------


def format_table(t: CayleyTable) -> str:
    lines = [str(t.n)] + [" ".join(str(int(v)) for v in row) for row in t.cells]
    return "\n".join(lines) + "\n"


def parse_table(text: str, label: str | None = None) -> CayleyTable:
    """Parse one table: first line ``n``, then ``n`` rows of ``n`` integers."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise AlgebraError("empty table text")
    try:
        n = int(lines[0])
    except ValueError as exc:
        raise AlgebraError(f"first line must be the order, got {lines[0]!r}") from exc
    if len(lines) != n + 1:
        raise AlgebraError(f"expected {n} rows after the order line, got {len(lines) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        try:
            row = [int(tok) for tok in ln.split()]
        except ValueError as exc:
            raise AlgebraError(f"line {k}: non-integer entry") from exc
        if len(row) != n:
            raise AlgebraError(f"line {k}: expected {n} entries, got {len(row)}")
        rows.append(row)
    return validate_latin(rows, label)


def read_tables(path: str | Path) -> list[CayleyTable]:
    """Read one or more tables separated by blank lines."""
    text = Path(path).read_text()
    blocks = [b for b in re.split(r"\n\s*\n", text) if b.strip()]
    return [parse_table(b, label=f"{Path(path).name}#{i}") for i, b in enumerate(blocks)]


def read_table(path: str | Path) -> CayleyTable:
    tables = read_tables(path)
    if len(tables) != 1:
        raise AlgebraError(f"{path}: expected exactly one table, found {len(tables)}")
    return tables[0]


def write_table(t: CayleyTable, path: str | Path) -> None:
    Path(path).write_text(format_table(t))


def write_tables(tables: Iterable[CayleyTable], path_or_stream) -> None:
    text = "\n".join(format_table(t) for t in tables)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        Path(path_or_stream).write_text(text)
