"""Daily-resolution trajectories for every vocabulary variable of a patient.

Each modality has its own inference rule:

* measurements: monotone piecewise cubic Hermite interpolation, held constant
  outside the observed range;
* condition codes: averaged randomly shifted histograms giving codes per day;
* medications: a binary on/off curve bounded by reconciliation reviews;
* demographics: one-hot category rows and a linear age row in years.

Variables absent from a record are imputed with the population median, a
prior of one code per twenty years, or "not taking" respectively.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._seeding import derive_rng
from .exceptions import ValidationError
from .ingest import (
    AGE_ROW,
    ALL_MEDICATIONS,
    CONDITION_CODE,
    DEMOGRAPHIC,
    MEASUREMENT,
    MEDICATION,
    RECONCILIATION,
    Demographics,
    PatientRecord,
    PopulationStats,
    VariableVocabulary,
)

DAYS_PER_YEAR = 365.25
# one code per 20 years, in codes per day
BASELINE_CODE_INTENSITY = 1.0 / (20 * DAYS_PER_YEAR)

OBSERVED = "observed"
IMPUTED = "imputed"


@dataclass
class Curve:
    first_day: int
    values: np.ndarray
    provenance: str = OBSERVED

    @property
    def grid(self) -> tuple[int, int]:
        return self.first_day, self.first_day + len(self.values) - 1

    def at(self, day: int) -> float:
        i = day - self.first_day
        if not 0 <= i < len(self.values):
            raise ValidationError(f"day {day} outside curve grid {self.grid}")
        return float(self.values[i])


@dataclass
class Curveset:
    patient_id: str
    grid: tuple[int, int]
    curves: list[Curve]
    vocabulary_hash: str = ""
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        """(n_variables, n_days) array in vocabulary order."""
        if self._values is None:
            self._values = np.vstack([c.values for c in self.curves])
        return self._values

    @property
    def n_imputed(self) -> int:
        return sum(c.provenance == IMPUTED for c in self.curves)


def _grid_days(grid) -> np.ndarray:
    first, last = grid
    if last < first:
        raise ValidationError(f"empty grid {grid}")
    return np.arange(first, last + 1)


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Node derivatives of the monotone piecewise cubic Hermite interpolant.

    Interior nodes take the weighted harmonic mean of the adjacent secants,
    or zero where the secants change sign or vanish. End nodes use the
    one-sided three-point estimate, clipped so the interpolant cannot
    overshoot.
    """
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d

    w1 = 2 * h[1:] + h[:-1]
    w2 = h[1:] + 2 * h[:-1]
    same_sign = (np.sign(delta[:-1]) * np.sign(delta[1:])) > 0
    # a subnormal secant overflows w / delta to inf, giving the correct limit of 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        hmean = (w1 + w2) / (w1 / delta[:-1] + w2 / delta[1:])
    d[1:-1] = np.where(same_sign, hmean, 0.0)

    d[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _end_slope(h0, h1, m0, m1):
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def hermite_eval(x, y, d, t) -> np.ndarray:
    """Evaluate the cubic Hermite spline with node slopes ``d`` at ``t``.

    Points outside ``[x[0], x[-1]]`` take the nearest end value.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    lo, hi = t <= x[0], t >= x[-1]
    out[lo] = y[0]
    out[hi] = y[-1]
    mid = ~(lo | hi)
    if mid.any():
        tm = t[mid]
        k = np.clip(np.searchsorted(x, tm, side="right") - 1, 0, len(x) - 2)
        h = x[k + 1] - x[k]
        s = (tm - x[k]) / h
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        # h00 = 1 - h01; this form reproduces flat segments exactly
        out[mid] = y[k] + h01 * (y[k + 1] - y[k]) + h * (h10 * d[k] + h11 * d[k + 1])
    return out


def interpolate_measurement(obs, grid) -> Curve:
    """Monotone cubic interpolation of ``(day, value)`` pairs onto ``grid``."""
    if len(obs) == 0:
        raise ValidationError("at least one observation is required")
    x = np.asarray([o[0] for o in obs], dtype=float)
    y = np.asarray([o[1] for o in obs], dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValidationError("observation values must be finite")
    if np.any(np.diff(x) == 0):
        raise ValidationError("duplicate observation days")
    if np.any(np.diff(x) < 0):
        raise ValidationError("observation days must be strictly increasing")
    days = _grid_days(grid)
    if x[0] < days[0] or x[-1] > days[-1]:
        raise ValidationError(f"observation days outside grid {grid}")
    if len(x) == 1:
        return Curve(int(days[0]), np.full(len(days), y[0]))
    d = pchip_slopes(x, y)
    vals = hermite_eval(x, y, d, days.astype(float))
    # pin nodes exactly; the polynomial form can be off by an ulp
    vals[(x - days[0]).astype(int)] = y
    return Curve(int(days[0]), vals)


def code_intensity(event_days, grid, n_histograms=64, bandwidth_fraction=0.1, rng=0) -> Curve:
    """Codes-per-day intensity from averaged, randomly shifted histograms.

    Each day is the unit cell ``[d, d + 1)`` and each event sits at its cell
    midpoint. Every histogram has bin width ``max(1, bandwidth_fraction *
    span_days)`` and an origin shifted uniformly in ``[0, width)``; bins are
    clipped to the grid so no mass leaks past the record boundaries. The
    value for a day is the histogram mass falling in its cell, averaged over
    histograms, so the curve sums to the event count.
    """
    if n_histograms < 1:
        raise ValidationError("n_histograms must be >= 1")
    days = _grid_days(grid)
    first, stop = float(days[0]), float(days[-1] + 1)
    ev = np.asarray(event_days, dtype=float)
    if ev.size and (ev.min() < first or ev.max() >= stop):
        raise ValidationError(f"event days outside grid {grid}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    width = max(1.0, bandwidth_fraction * len(days))
    pos = np.sort(ev + 0.5)
    shifts = rng.uniform(0.0, width, size=n_histograms)[:, None]
    cells = np.append(days, days[-1] + 1).astype(float)[None, :]

    # cumulative histogram mass at every cell boundary, one row per shift
    origin = first - shifts
    j = np.floor((cells - origin) / width)
    lo = np.maximum(first, origin + j * width)
    hi = np.minimum(stop, origin + (j + 1) * width)
    n_lo = np.searchsorted(pos, lo, side="left")
    n_hi = np.searchsorted(pos, hi, side="left")
    frac = np.where(hi > lo, (cells - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    mass = n_lo + (n_hi - n_lo) * frac
    return Curve(int(days[0]), np.diff(mass, axis=1).mean(axis=0))


def medication_curve(mention_days, reconciliation_days, grid) -> Curve:
    """Binary taking/not-taking curve.

    On from the first mention back to the day after the closest earlier
    reconciliation, and from the last mention forward to the day before the
    closest later reconciliation. Without a reconciliation on a side, the
    interval stops at the mention itself.
    """
    if len(mention_days) == 0:
        raise ValidationError("at least one medication mention is required")
    days = _grid_days(grid)
    first_m, last_m = min(mention_days), max(mention_days)
    if first_m < days[0] or last_m > days[-1]:
        raise ValidationError(f"mention days outside grid {grid}")
    earlier = [r for r in reconciliation_days if r < first_m]
    later = [r for r in reconciliation_days if r > last_m]
    start = max(earlier) + 1 if earlier else first_m
    end = min(later) - 1 if later else last_m
    return Curve(int(days[0]), ((days >= start) & (days <= end)).astype(float))


def demographic_curves(d: Demographics, grid, sex_categories, race_categories) -> list[Curve]:
    """One-hot sex rows, one-hot race rows, then age in years."""
    if d.sex not in sex_categories:
        raise ValidationError(f"unknown sex category {d.sex!r}")
    if d.race not in race_categories:
        raise ValidationError(f"unknown race category {d.race!r}")
    days = _grid_days(grid)
    n = len(days)
    curves = [Curve(int(days[0]), np.full(n, float(c == d.sex))) for c in sex_categories]
    curves += [Curve(int(days[0]), np.full(n, float(c == d.race))) for c in race_categories]
    curves.append(Curve(int(days[0]), (days - d.birth_day) / DAYS_PER_YEAR))
    return curves


def impute_missing(variable_id, modality, grid, stats: PopulationStats) -> Curve:
    days = _grid_days(grid)
    if modality == MEASUREMENT:
        if variable_id not in stats.medians:
            raise ValidationError(f"no population median for measurement {variable_id!r}")
        level = stats.medians[variable_id]
    elif modality == CONDITION_CODE:
        level = BASELINE_CODE_INTENSITY
    elif modality == MEDICATION:
        level = 0.0
    else:
        raise ValidationError(f"cannot impute modality {modality!r}")
    return Curve(int(days[0]), np.full(len(days), float(level)), IMPUTED)


def build_curveset(
    r: PatientRecord,
    stats: PopulationStats,
    vocab: VariableVocabulary,
    n_histograms=64,
    bandwidth_fraction=0.1,
    seed=0,
) -> Curveset:
    """Align one curve per vocabulary row on the patient's span."""
    if r.demographics is None:
        raise ValidationError(f"patient {r.patient_id!r} has no demographics")
    grid = r.span
    by_mod = {m: r.variables(m) for m in (MEASUREMENT, CONDITION_CODE, MEDICATION)}
    recon = r.variables(RECONCILIATION)
    recon_all = [e.day for e in recon.get(ALL_MEDICATIONS, ())]

    curves = []
    for var, modality in vocab:
        if modality == DEMOGRAPHIC:
            continue
        evs = by_mod[modality].get(var)
        if not evs:
            curves.append(impute_missing(var, modality, grid, stats))
        elif modality == MEASUREMENT:
            curves.append(interpolate_measurement(_daily_mean(evs), grid))
        elif modality == CONDITION_CODE:
            rng = derive_rng(seed, "rash", r.patient_id, var)
            curves.append(code_intensity([e.day for e in evs], grid, n_histograms, bandwidth_fraction, rng))
        else:
            rdays = recon_all + [e.day for e in recon.get(var, ())]
            curves.append(medication_curve([e.day for e in evs], rdays, grid))

    curves += demographic_curves(r.demographics, grid, vocab.sex_categories, vocab.race_categories)
    if len(curves) != len(vocab):
        raise ValidationError("vocabulary does not match its demographic category sets")
    return Curveset(r.patient_id, grid, curves, vocab.hash())


def _daily_mean(evs):
    # several same-day measurements collapse to their mean
    acc: dict[int, list[float]] = {}
    for e in evs:
        acc.setdefault(e.day, []).append(e.value)
    return [(day, float(np.mean(v))) for day, v in sorted(acc.items())]


def write_curveset(cs: Curveset) -> str:
    """Debug dump: one row per variable, one column per grid day."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for c in cs.curves:
        w.writerow([repr(float(v)) for v in c.values])
    return buf.getvalue()


def read_curveset(text: str, patient_id: str, first_day: int, provenance=None) -> Curveset:
    rows = [np.array([float(v) for v in row]) for row in csv.reader(io.StringIO(text)) if row]
    provenance = provenance or [OBSERVED] * len(rows)
    curves = [Curve(first_day, v, p) for v, p in zip(rows, provenance)]
    return Curveset(patient_id, (first_day, first_day + len(rows[0]) - 1), curves)
