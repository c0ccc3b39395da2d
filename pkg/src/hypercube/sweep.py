"""Optimize every loop of the requested orders, persist records, fit slopes.

Records live in a CSV with a fixed header. The optimizer fingerprint of each
record is kept next to it in ``<csv>.meta.json`` (the CSV schema has no
column for it); on resume a record is reused only when its canonical hash
and fingerprint both match the current run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .algebra import CayleyTable, assoc_report, canonical_hash
from .enumeration import EnumConfig, loops_for
from .optimizer import OptConfig, minimize

log = logging.getLogger(__name__)

CSV_HEADER = [
    "order", "loop_id", "canonical_hash", "n_v_norm",
    "H_min", "B_min", "R_min", "H_norm", "B_norm", "R_norm",
    "feas_residual", "converged", "restarts_used", "seed",
]
SWEEP_ORDERS = range(2, 9)


class SweepError(ValueError):
    pass


class RecordFormatError(SweepError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientData(SweepError):
    pass


@dataclass(frozen=True)
class SweepRecord:
    order: int
    loop_id: int
    canonical_hash: int
    n_v_norm: float
    H_min: float
    B_min: float
    R_min: float
    feas_residual: float
    converged: bool
    restarts_used: int
    seed: int

    @property
    def H_norm(self) -> float:
        return self.H_min / self.order**2

    @property
    def B_norm(self) -> float:
        return self.B_min / self.order**2

    @property
    def R_norm(self) -> float:
        return self.R_min / self.order**2

    @property
    def key(self) -> tuple[int, int]:
        return self.order, self.canonical_hash

    def sort_key(self) -> tuple[int, int, int]:
        return self.order, self.canonical_hash, self.seed

    def to_row(self) -> list[str]:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(H_norm=self.H_norm, B_norm=self.B_norm, R_norm=self.R_norm)
        row = []
        for name in CSV_HEADER:
            v = values[name]
            if name == "canonical_hash":
                row.append(f"{v:016x}")
            elif isinstance(v, bool):
                row.append("true" if v else "false")
            elif isinstance(v, float):
                row.append(format(v, ".17g"))
            else:
                row.append(str(v))
        return row


def _parse_row(row: list[str], line: int) -> SweepRecord:
    if len(row) != len(CSV_HEADER):
        raise RecordFormatError(line, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    v = dict(zip(CSV_HEADER, row))
    try:
        if v["converged"] not in ("true", "false"):
            raise ValueError(f"converged must be true or false, got {v['converged']!r}")
        return SweepRecord(
            order=int(v["order"]),
            loop_id=int(v["loop_id"]),
            canonical_hash=int(v["canonical_hash"], 16),
            n_v_norm=float(v["n_v_norm"]),
            H_min=float(v["H_min"]),
            B_min=float(v["B_min"]),
            R_min=float(v["R_min"]),
            feas_residual=float(v["feas_residual"]),
            converged=v["converged"] == "true",
            restarts_used=int(v["restarts_used"]),
            seed=int(v["seed"]),
        )
    except ValueError as exc:
        raise RecordFormatError(line, str(exc)) from None


def write_records(records, path: str | Path) -> None:
    """Write records (sorted) to CSV; an empty list yields a header-only file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in sorted(records, key=SweepRecord.sort_key):
            w.writerow(r.to_row())
    os.replace(tmp, path)


def read_records(path: str | Path) -> list[SweepRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RecordFormatError(1, "missing header row")
        if header != CSV_HEADER:
            missing = [h for h in CSV_HEADER if h not in header]
            detail = f"missing columns {missing}" if missing else f"unexpected header {header}"
            raise RecordFormatError(1, detail)
        return [_parse_row(row, reader.line_num) for row in reader if row]


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _load_meta(path: Path) -> dict:
    mp = _meta_path(path)
    if not mp.exists():
        return {"fingerprints": {}}
    with open(mp) as fh:
        return json.load(fh)


def _save(records: list[SweepRecord], fingerprints: dict, path: Path, cfg: OptConfig) -> None:
    write_records(records, path)
    meta = {
        "optimizer": cfg.to_dict(),
        "fingerprint": cfg.fingerprint(),
        "fingerprints": {_fp_key(r): fingerprints[_fp_key(r)] for r in records},
    }
    tmp = _meta_path(path).with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    os.replace(tmp, _meta_path(path))


def _fp_key(r: SweepRecord) -> str:
    return f"{r.order}:{r.canonical_hash:016x}:{r.seed}"


def optimize_loop(t: CayleyTable, order: int, loop_id: int, h: int, cfg: OptConfig) -> SweepRecord:
    best, _ = minimize(t, cfg)
    return SweepRecord(
        order=order,
        loop_id=loop_id,
        canonical_hash=h,
        n_v_norm=assoc_report(t).n_v_norm,
        H_min=best.H,
        B_min=best.B,
        R_min=best.R,
        feas_residual=best.feas_residual,
        converged=best.converged,
        restarts_used=cfg.restarts,
        seed=cfg.seed,
    )


def _task(args):
    cells, order, loop_id, h, cfg = args
    from .algebra import _trusted

    return optimize_loop(_trusted(cells), order, loop_id, h, cfg)


def run_sweep(
    orders,
    cfg: OptConfig,
    enum_cfgs: dict[int, EnumConfig] | None = None,
    path: str | Path | None = None,
    workers: int = 1,
) -> list[SweepRecord]:
    """One record per loop class, sorted by ``(order, canonical_hash, seed)``.

    With ``path`` set, finished records are written after every loop so an
    interrupted sweep resumes where it stopped. ``enum_cfgs`` maps an order to
    its population; missing orders use :meth:`EnumConfig.default_for`.
    """
    orders = sorted(set(int(o) for o in orders))
    bad = [o for o in orders if o not in SWEEP_ORDERS]
    if bad:
        raise SweepError(f"orders must lie in [2, 8], got {bad}")
    if workers < 1:
        raise SweepError("workers must be positive")
    enum_cfgs = enum_cfgs or {}
    fp = cfg.fingerprint()

    done: dict[tuple[int, int], SweepRecord] = {}
    fingerprints: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if path.exists():
            meta = _load_meta(path)
            for r in read_records(path):
                if r.seed == cfg.seed and meta["fingerprints"].get(_fp_key(r)) == fp:
                    done[r.key] = r
                    fingerprints[_fp_key(r)] = fp
            log.info("resume: %d reusable records in %s", len(done), path)

    tasks = []
    for order in orders:
        ecfg = enum_cfgs.get(order) or EnumConfig.default_for(order, seed=cfg.seed)
        if ecfg.order != order:
            raise SweepError(f"enumeration config for order {order} names order {ecfg.order}")
        if ecfg.dedup != "isomorphism":
            raise SweepError("sweeps need one loop per isomorphism class (dedup='isomorphism')")
        for loop_id, t in enumerate(loops_for(ecfg)):
            h = canonical_hash(t)
            if (order, h) not in done:
                tasks.append((t.cells, order, loop_id, h, cfg))
    log.info("sweep: %d loops to optimize, %d reused", len(tasks), len(done))

    def record(r: SweepRecord) -> None:
        done[r.key] = r
        fingerprints[_fp_key(r)] = fp
        log.info(
            "order=%d loop=%d H/n^2=%.5f R/n^2=%.5f converged=%s",
            r.order, r.loop_id, r.H_norm, r.R_norm, r.converged,
        )
        if path is not None:
            _save(list(done.values()), fingerprints, path, cfg)

    if workers == 1:
        for task in tasks:
            record(_task(task))
    elif tasks:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r in pool.map(_task, tasks):
                record(r)
    if path is not None and not tasks:
        _save(list(done.values()), fingerprints, path, cfg)
    keep = set(orders)
    return sorted((r for r in done.values() if r.order in keep), key=SweepRecord.sort_key)


# --- scaling-law fits ---------------------------------------------------------

FIXED_INTERCEPTS = {"R": 0.0, "B": 3.0, "H": 3.0}


@dataclass
class FitResult:
    c_R: float
    c_B: float
    c_H: float
    intercept_R: float
    intercept_B: float
    intercept_H: float
    c_ratio: float
    r_squared: tuple[float, float, float]
    n_points: int
    fixed_intercept_mode: bool
    per_order: dict[int, dict[str, float]] = field(default_factory=dict)
    quarantine: list[dict] = field(default_factory=list)

    def line(self, quantity: str) -> tuple[float, float]:
        """``(intercept, slope)`` of the fitted line for ``"H"``, ``"R"`` or ``"B"``.

        ``c_B`` is reported with the sign flipped (``B = 3 - c_B * n_v``).
        """
        slope = {"R": self.c_R, "B": -self.c_B, "H": self.c_H}[quantity]
        return getattr(self, f"intercept_{quantity}"), slope

    def to_json(self) -> dict:
        def num(x):
            return float(x) if math.isfinite(x) else None

        return {
            "c_R": num(self.c_R),
            "c_B": num(self.c_B),
            "c_H": num(self.c_H),
            "intercept_R": num(self.intercept_R),
            "intercept_B": num(self.intercept_B),
            "intercept_H": num(self.intercept_H),
            "c_ratio": num(self.c_ratio),
            "r_squared": [num(x) for x in self.r_squared],
            "n_points": self.n_points,
            "fixed_intercept_mode": self.fixed_intercept_mode,
            "per_order": {str(k): {q: num(v) for q, v in d.items()} for k, d in self.per_order.items()},
            "quarantine": self.quarantine,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FitResult":
        def num(x):
            return float("nan") if x is None else float(x)

        return cls(
            c_R=num(d["c_R"]),
            c_B=num(d["c_B"]),
            c_H=num(d["c_H"]),
            intercept_R=num(d["intercept_R"]),
            intercept_B=num(d["intercept_B"]),
            intercept_H=num(d["intercept_H"]),
            c_ratio=num(d["c_ratio"]),
            r_squared=tuple(num(x) for x in d["r_squared"]),
            n_points=int(d["n_points"]),
            fixed_intercept_mode=bool(d["fixed_intercept_mode"]),
            per_order={int(k): {q: num(v) for q, v in v.items()} for k, v in d.get("per_order", {}).items()},
            quarantine=list(d.get("quarantine", [])),
        )


def _line_fit(x: np.ndarray, y: np.ndarray, intercept: float | None) -> tuple[float, float, float]:
    """Least-squares ``(intercept, slope, r^2)``; a given intercept is held fixed."""
    if intercept is None:
        slope, b0 = np.polyfit(x, y, 1)
    else:
        b0 = intercept
        slope = float(x @ (y - b0) / (x @ x))
    resid = y - (b0 + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else float("nan")
    return float(b0), float(slope), r2


def _fit_arrays(x, ys, fixed: bool):
    out = {}
    for q in ("R", "B", "H"):
        out[q] = _line_fit(x, ys[q], FIXED_INTERCEPTS[q] if fixed else None)
    return out


def fit_scaling(records, fixed_intercepts: bool = True) -> FitResult:
    """Fit ``R~``, ``B~``, ``H~`` against the normalized violation count.

    Only converged records enter the fit; the rest are listed in
    ``quarantine``. The joint fit uses every order together; ``per_order``
    repeats it order by order where an order has enough spread.

    Raises:
        InsufficientData: fewer than two distinct ``n_v_norm`` values.
    """
    records = list(records)
    good = [r for r in records if r.converged]
    quarantine = [
        {"order": r.order, "loop_id": r.loop_id, "canonical_hash": f"{r.canonical_hash:016x}"}
        for r in records
        if not r.converged
    ]
    xs = np.array([r.n_v_norm for r in good])
    if len(np.unique(xs)) < 2:
        raise InsufficientData(f"need two distinct n_v_norm values, have {len(np.unique(xs))}")

    def arrays(rs):
        x = np.array([r.n_v_norm for r in rs])
        ys = {
            "R": np.array([r.R_norm for r in rs]),
            "B": np.array([r.B_norm for r in rs]),
            "H": np.array([r.H_norm for r in rs]),
        }
        return x, ys

    fits = _fit_arrays(*arrays(good), fixed_intercepts)
    per_order = {}
    for order in sorted({r.order for r in good}):
        rs = [r for r in good if r.order == order]
        x, ys = arrays(rs)
        if len(np.unique(x)) < 2:
            continue
        f = _fit_arrays(x, ys, fixed_intercepts)
        per_order[order] = {"c_R": f["R"][1], "c_B": -f["B"][1], "c_H": f["H"][1], "n_points": float(len(rs))}

    c_R, c_B, c_H = fits["R"][1], -fits["B"][1], fits["H"][1]
    return FitResult(
        c_R=c_R,
        c_B=c_B,
        c_H=c_H,
        intercept_R=fits["R"][0],
        intercept_B=fits["B"][0],
        intercept_H=fits["H"][0],
        c_ratio=c_B / c_R if c_R != 0 else float("nan"),
        r_squared=(fits["R"][2], fits["B"][2], fits["H"][2]),
        n_points=len(good),
        fixed_intercept_mode=fixed_intercepts,
        per_order=per_order,
        quarantine=quarantine,
    )


def write_fit(fit: FitResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(fit.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit(path: str | Path) -> FitResult:
    with open(path) as fh:
        return FitResult.from_json(json.load(fh))
