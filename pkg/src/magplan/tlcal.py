"""Augmented Tolles-Lawson magnetometer calibration.

The platform's magnetic interference is modeled as a linear function of 20
regressors built from the field direction cosines: 3 permanent-moment terms,
6 induced terms, 9 eddy-current terms, a constant bias, and a speed term.
Fitting recovers the coefficient vector from a calibration log where the
ambient field is known; compensation subtracts the predicted interference
from raw total-field readings.

Log file format (`maglog v1`): first line `maglog v1`, then one CSV row per
sample: `timestamp,bx,by,bz,btotal,speed[,be_truth]`. The trailing column is
the known ambient field and is required for fitting.

Coefficient file format (`tlcoef v1`): first line `tlcoef v1`, then 20 rows
`index,value` with index 1..20 in the ordering above.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

N_COEFFS = 20

# Column variance this far below the largest column's marks the coefficient
# as unidentifiable from the log.
EXCITATION_RATIO = 1e-12


class CalibrationError(Exception):
    """Base error for calibration data handling and fitting."""


class InvalidSampleError(CalibrationError):
    """A magnetometer sample violates its invariants."""


class InsufficientDataError(CalibrationError):
    """Too few usable rows to identify the coefficient vector."""


class RankDeficientError(CalibrationError):
    """The regressor matrix does not have full column rank.

    Attributes:
        rank: numerical rank found by the solver.
    """

    def __init__(self, rank: int):
        super().__init__(
            f"regressor matrix has numerical rank {rank}, need {N_COEFFS}; "
            "the log does not excite all coefficients"
        )
        self.rank = rank


class ExcitationWarning(UserWarning):
    """A regressor column is (nearly) constant; its coefficient is weakly identified."""


@dataclass(frozen=True)
class MagSample:
    """One synchronized vector + scalar magnetometer reading."""

    b_vec: tuple[float, float, float]
    b_total: float
    speed: float
    timestamp: float

    def __post_init__(self) -> None:
        vals = (*self.b_vec, self.b_total, self.speed, self.timestamp)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidSampleError(f"sample fields must be finite, got {self}")
        if self.b_total <= 0:
            raise InvalidSampleError(f"b_total must be > 0, got {self.b_total}")


@dataclass(frozen=True)
class DirectionCosines:
    """Unit-field components (B_x, B_y, B_z)/B_t, optionally with time rates."""

    cx: float
    cy: float
    cz: float
    cx_dot: Optional[float] = None
    cy_dot: Optional[float] = None
    cz_dot: Optional[float] = None

    @property
    def has_rates(self) -> bool:
        return self.cx_dot is not None

    def rates(self) -> tuple[float, float, float]:
        if not self.has_rates:
            raise CalibrationError("direction-cosine rates not set")
        assert self.cy_dot is not None and self.cz_dot is not None
        return (self.cx_dot, self.cy_dot, self.cz_dot)  # type: ignore[return-value]


@dataclass(frozen=True)
class CalibrationCoefficients:
    """The fitted 20-term interference model.

    Ordering: eps[0:3] permanent, eps[3:9] induced, eps[9:18] eddy,
    eps[18] bias, eps[19] speed.
    """

    eps: np.ndarray

    def __post_init__(self) -> None:
        eps = np.asarray(self.eps, dtype=float)
        if eps.shape != (N_COEFFS,):
            raise CalibrationError(f"expected {N_COEFFS} coefficients, got {eps.shape}")
        if not np.all(np.isfinite(eps)):
            raise CalibrationError("coefficients must all be finite")
        eps = eps.copy()
        eps.setflags(write=False)
        object.__setattr__(self, "eps", eps)


def direction_cosines(s: MagSample) -> DirectionCosines:
    """Direction cosines of one sample; rates left unset."""
    if s.b_total <= 0:
        raise InvalidSampleError(f"b_total must be > 0, got {s.b_total}")
    return DirectionCosines(
        s.b_vec[0] / s.b_total, s.b_vec[1] / s.b_total, s.b_vec[2] / s.b_total
    )


def cosine_rates(
    prev: DirectionCosines, cur: DirectionCosines, dt: float
) -> DirectionCosines:
    """Attach backward-difference rates (cur - prev)/dt to cur."""
    if dt <= 0:
        raise CalibrationError(f"dt must be > 0, got {dt}")
    return DirectionCosines(
        cur.cx,
        cur.cy,
        cur.cz,
        (cur.cx - prev.cx) / dt,
        (cur.cy - prev.cy) / dt,
        (cur.cz - prev.cz) / dt,
    )


def build_regressor_row(
    dc: DirectionCosines, b_total: float, speed: float
) -> np.ndarray:
    """One 20-column regressor row.

    Layout: [0:3] cosines, [3:9] b_total * quadratic cosine products,
    [9:18] b_total * (cosine x rate) grid in row-major (cx, cy, cz) x
    (cx_dot, cy_dot, cz_dot) order, [18] constant 1, [19] speed.
    """
    cx, cy, cz = dc.cx, dc.cy, dc.cz
    rx, ry, rz = dc.rates()
    row = np.empty(N_COEFFS, dtype=float)
    row[0:3] = (cx, cy, cz)
    row[3:9] = np.array([cx * cx, cy * cy, cz * cz, cx * cy, cx * cz, cy * cz])
    row[3:9] *= b_total
    row[9:18] = np.array(
        [
            cx * rx, cx * ry, cx * rz,
            cy * rx, cy * ry, cy * rz,
            cz * rx, cz * ry, cz * rz,
        ]
    )
    row[9:18] *= b_total
    row[18] = 1.0
    row[19] = speed
    return row


def _check_timestamps(log: Sequence[MagSample]) -> None:
    for i in range(1, len(log)):
        if log[i].timestamp <= log[i - 1].timestamp:
            raise InvalidSampleError(
                f"timestamps must be strictly increasing: row {i} has "
                f"{log[i].timestamp} after {log[i - 1].timestamp}"
            )


def build_regressor_matrix(log: Sequence[MagSample]) -> np.ndarray:
    """Regressor rows for log[1:]; log[0] seeds the rate differences."""
    _check_timestamps(log)
    if len(log) < 2:
        raise InsufficientDataError("need at least 2 samples to form rate terms")
    rows = np.empty((len(log) - 1, N_COEFFS), dtype=float)
    prev_dc = direction_cosines(log[0])
    for i in range(1, len(log)):
        s = log[i]
        dc = cosine_rates(prev_dc, direction_cosines(s), s.timestamp - log[i - 1].timestamp)
        rows[i - 1] = build_regressor_row(dc, s.b_total, s.speed)
        prev_dc = DirectionCosines(dc.cx, dc.cy, dc.cz)
    return rows


def _warn_on_poor_excitation(a: np.ndarray) -> list[int]:
    # Column 19 (the constant bias regressor) has zero variance by
    # construction, so it is exempt from the check.
    variances = a.var(axis=0)
    limit = EXCITATION_RATIO * float(variances.max())
    weak = [
        c + 1
        for c in range(N_COEFFS)
        if c != 18 and variances[c] < limit
    ]
    if weak:
        warnings.warn(
            f"regressor columns {weak} are barely excited; "
            "their coefficients are unreliable",
            ExcitationWarning,
            stacklevel=3,
        )
    return weak


def fit(
    log: Sequence[MagSample], b_earth: Sequence[float]
) -> CalibrationCoefficients:
    """Least-squares coefficients from a log with known ambient field.

    b_earth is aligned 1:1 with log; the first entry is unused because the
    first sample only seeds the rate differences. Solved by SVD rather than
    the normal equations; the minimizer is the same, the conditioning is not.
    """
    if len(b_earth) != len(log):
        raise CalibrationError(
            f"b_earth has {len(b_earth)} entries for {len(log)} samples"
        )
    a = build_regressor_matrix(log)
    if a.shape[0] < N_COEFFS:
        raise InsufficientDataError(
            f"need >= {N_COEFFS} usable rows, got {a.shape[0]}"
        )
    _warn_on_poor_excitation(a)
    y = np.array([s.b_total for s in log[1:]]) - np.asarray(b_earth[1:], dtype=float)
    eps, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    if rank < N_COEFFS:
        raise RankDeficientError(int(rank))
    return CalibrationCoefficients(eps)


def compensate(
    s: MagSample, dc: DirectionCosines, eps: CalibrationCoefficients
) -> float:
    """Ambient-field estimate: raw total reading minus predicted interference."""
    row = build_regressor_row(dc, s.b_total, s.speed)
    return s.b_total - float(row @ eps.eps)


def compensate_log(
    log: Sequence[MagSample], eps: CalibrationCoefficients
) -> np.ndarray:
    """Ambient-field estimates for log[1:] (rates from backward differences)."""
    a = build_regressor_matrix(log)
    b_total = np.array([s.b_total for s in log[1:]])
    return b_total - a @ eps.eps


def residual_rms(
    log: Sequence[MagSample],
    b_earth: Sequence[float],
    eps: CalibrationCoefficients,
) -> float:
    """RMS of (estimated - true) ambient field over the usable rows."""
    est = compensate_log(log, eps)
    resid = est - np.asarray(b_earth[1:], dtype=float)
    return float(np.sqrt(np.mean(resid**2)))


def load_maglog(path: str) -> tuple[list[MagSample], Optional[np.ndarray]]:
    """Parse a `maglog v1` file.

    Returns the samples and, when every row carries the optional be_truth
    column, the aligned truth array (otherwise None).
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "maglog v1":
        raise CalibrationError("line 1: expected header 'maglog v1'")
    samples: list[MagSample] = []
    truths: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) not in (6, 7):
            raise CalibrationError(
                f"line {lineno}: expected 6 or 7 CSV fields, got {len(fields)}"
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise CalibrationError(f"line {lineno}: bad value: {exc}") from exc
        try:
            samples.append(
                MagSample(
                    b_vec=(vals[1], vals[2], vals[3]),
                    b_total=vals[4],
                    speed=vals[5],
                    timestamp=vals[0],
                )
            )
        except InvalidSampleError as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from exc
        if len(vals) == 7:
            truths.append(vals[6])
    if truths and len(truths) != len(samples):
        raise CalibrationError("be_truth column present on some rows but not all")
    _check_timestamps(samples)
    return samples, (np.array(truths) if truths else None)


def save_maglog(
    path: str, log: Sequence[MagSample], b_earth: Optional[Sequence[float]] = None
) -> None:
    if b_earth is not None and len(b_earth) != len(log):
        raise CalibrationError("b_earth length must match log length")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("maglog v1\n")
        for i, s in enumerate(log):
            fields = [s.timestamp, *s.b_vec, s.b_total, s.speed]
            if b_earth is not None:
                fields.append(float(b_earth[i]))
            fh.write(",".join(repr(float(v)) for v in fields))
            fh.write("\n")


def save_coefficients(eps: CalibrationCoefficients, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("tlcoef v1\n")
        for i, v in enumerate(eps.eps, start=1):
            fh.write(f"{i},{float(v)!r}\n")


def load_coefficients(path: str) -> CalibrationCoefficients:
    with open(path, "r", encoding="ascii") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines or lines[0].strip() != "tlcoef v1":
        raise CalibrationError("line 1: expected header 'tlcoef v1'")
    if len(lines) != N_COEFFS + 1:
        raise CalibrationError(
            f"expected {N_COEFFS} coefficient rows, got {len(lines) - 1}"
        )
    eps = np.empty(N_COEFFS, dtype=float)
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 2:
            raise CalibrationError(f"line {lineno}: expected 'index,value'")
        try:
            idx = int(fields[0])
            val = float(fields[1])
        except ValueError as exc:
            raise CalibrationError(f"line {lineno}: bad value: {exc}") from exc
        if idx != lineno - 1:
            raise CalibrationError(
                f"line {lineno}: expected index {lineno - 1}, got {idx}"
            )
        eps[idx - 1] = val
    return CalibrationCoefficients(eps)
