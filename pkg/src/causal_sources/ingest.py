"""Parsing, validation and population summaries of multimodal event tables.

Two comma-separated tables feed the pipeline::

    patient_id,day,modality,variable_id,value
    patient_id,sex,race,birth_day

``modality`` is one of ``measurement``, ``condition_code``, ``medication`` or
``reconciliation``. Only measurements carry a ``value``. A reconciliation row
marks a medication-list review; its ``variable_id`` names the medication it
applies to, or ``*`` for every medication of the patient.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .exceptions import ValidationError

MEASUREMENT = "measurement"
CONDITION_CODE = "condition_code"
MEDICATION = "medication"
RECONCILIATION = "reconciliation"
DEMOGRAPHIC = "demographic"

MODALITIES = (MEASUREMENT, CONDITION_CODE, MEDICATION, RECONCILIATION)
CURVE_MODALITIES = (MEASUREMENT, CONDITION_CODE, MEDICATION)

EVENT_HEADER = ("patient_id", "day", "modality", "variable_id", "value")
DEMOGRAPHICS_HEADER = ("patient_id", "sex", "race", "birth_day")
ALL_MEDICATIONS = "*"
AGE_ROW = "age"


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    day: int
    modality: str
    variable_id: str
    value: float | None = None


@dataclass(frozen=True)
class Demographics:
    patient_id: str
    sex: str
    race: str
    birth_day: int


@dataclass
class PatientRecord:
    """All events of one patient, grouped by modality and sorted by day."""

    patient_id: str
    events: dict[str, list[EventRecord]]
    demographics: Demographics | None
    span: tuple[int, int]

    @property
    def span_days(self) -> int:
        return self.span[1] - self.span[0] + 1

    def variables(self, modality: str) -> dict[str, list[EventRecord]]:
        """Events of one modality keyed by ``variable_id``."""
        out: dict[str, list[EventRecord]] = defaultdict(list)
        for ev in self.events.get(modality, ()):
            out[ev.variable_id].append(ev)
        return dict(out)

    def all_events(self) -> list[EventRecord]:
        return [ev for m in MODALITIES for ev in self.events.get(m, ())]


@dataclass(frozen=True)
class Finding:
    invariant: str
    message: str
    modality: str | None = None
    event_index: int | None = None


@dataclass
class PopulationStats:
    medians: dict[str, float] = field(default_factory=dict)
    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "medians": {k: self.medians[k] for k in sorted(self.medians)},
            "counts": [[m, v, self.counts[(m, v)]] for m, v in sorted(self.counts)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationStats":
        return cls(
            medians={k: float(v) for k, v in d["medians"].items()},
            counts={(m, v): int(c) for m, v, c in d["counts"]},
        )


@dataclass(frozen=True)
class VariableVocabulary:
    """Frozen row order shared by every curveset and matrix downstream."""

    rows: tuple[tuple[str, str], ...]
    sex_categories: tuple[str, ...]
    race_categories: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def index(self, variable_id: str, modality: str) -> int:
        return self._lookup[(variable_id, modality)]

    @property
    def _lookup(self) -> dict[tuple[str, str], int]:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {row: i for i, row in enumerate(self.rows)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    @property
    def labels(self) -> list[str]:
        return [v if m == DEMOGRAPHIC else f"{m}:{v}" for v, m in self.rows]

    def to_dict(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "sex_categories": list(self.sex_categories),
            "race_categories": list(self.race_categories),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariableVocabulary":
        return cls(
            rows=tuple((v, m) for v, m in d["rows"]),
            sex_categories=tuple(d["sex_categories"]),
            race_categories=tuple(d["race_categories"]),
        )

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _lines(source) -> Iterable[str]:
    if source is None:
        return iter(())
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        return io.TextIOWrapper(source, encoding="utf-8")
    return source


def _parse_int(token: str, what: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ValidationError(f"{what} must be an integer, got {token!r}", line) from None


def _read_table(source, header: tuple[str, ...]):
    reader = csv.reader(_lines(source))
    first = next(reader, None)
    if first is None:
        return
    if tuple(c.strip() for c in first) != header:
        raise ValidationError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", 1)
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(
                f"expected {len(header)} fields, got {len(row)}", reader.line_num
            )
        yield reader.line_num, [c.strip() for c in row]


def parse_demographics(source) -> dict[str, Demographics]:
    """Read the demographics table into a ``patient_id -> Demographics`` map."""
    out: dict[str, Demographics] = {}
    for line, (pid, sex, race, birth) in _read_table(source, DEMOGRAPHICS_HEADER):
        if not pid:
            raise ValidationError("empty patient_id", line)
        if pid in out:
            raise ValidationError(f"duplicate demographics row for patient {pid!r}", line)
        if not sex or not race:
            raise ValidationError("sex and race must be non-empty", line)
        out[pid] = Demographics(pid, sex, race, _parse_int(birth, "birth_day", line))
    return out


def parse_events(source, demographics=None) -> list[PatientRecord]:
    """Group an event table into per-patient records.

    Parameters
    ----------
    source : bytes, str or file-like
        Event table including its header line.
    demographics : dict or bytes/str/file-like, optional
        Parsed demographics map or the raw demographics table. Patients that
        only appear here are kept with the degenerate span ``(0, 0)``.

    Returns
    -------
    list of PatientRecord
        In order of first appearance in the event table, followed by
        demographics-only patients in table order.
    """
    if demographics is not None and not isinstance(demographics, dict):
        demographics = parse_demographics(demographics)
    demographics = demographics or {}

    grouped: dict[str, list[EventRecord]] = {}
    for line, (pid, day_s, modality, var, value_s) in _read_table(source, EVENT_HEADER):
        if not pid:
            raise ValidationError("empty patient_id", line)
        day = _parse_int(day_s, "day", line)
        if day < 0:
            raise ValidationError(f"day must be >= 0, got {day}", line)
        if modality not in MODALITIES:
            raise ValidationError(f"unknown modality {modality!r}", line)
        if not var:
            raise ValidationError("empty variable_id", line)
        if modality == MEASUREMENT:
            if not value_s:
                raise ValidationError(f"measurement {var!r} has no value", line)
            try:
                value = float(value_s)
            except ValueError:
                raise ValidationError(f"value must be a real number, got {value_s!r}", line) from None
            if not math.isfinite(value):
                raise ValidationError(f"measurement {var!r} has non-finite value", line)
        else:
            if value_s:
                raise ValidationError(f"{modality} rows must leave value empty", line)
            value = None
        grouped.setdefault(pid, []).append(EventRecord(pid, day, modality, var, value))

    records = [_make_record(pid, evs, demographics.get(pid)) for pid, evs in grouped.items()]
    for pid, demo in demographics.items():
        if pid not in grouped:
            records.append(PatientRecord(pid, {}, demo, (0, 0)))
    return records


def _make_record(pid, events, demo) -> PatientRecord:
    by_mod: dict[str, list[EventRecord]] = {}
    for m in MODALITIES:
        evs = [e for e in events if e.modality == m]
        if evs:
            # sorted() is stable, so same-day events keep file order
            by_mod[m] = sorted(evs, key=lambda e: e.day)
    days = [e.day for e in events]
    return PatientRecord(pid, by_mod, demo, (min(days), max(days)))


def serialize_events(records: Iterable[PatientRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    for r in records:
        for ev in r.all_events():
            w.writerow([ev.patient_id, ev.day, ev.modality, ev.variable_id,
                        "" if ev.value is None else repr(float(ev.value))])
    return buf.getvalue()


def serialize_demographics(records: Iterable[PatientRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DEMOGRAPHICS_HEADER)
    for r in records:
        d = r.demographics
        if d is not None:
            w.writerow([d.patient_id, d.sex, d.race, d.birth_day])
    return buf.getvalue()


def validate_record(r: PatientRecord) -> list[Finding]:
    """Check every PatientRecord invariant; an empty list means valid."""
    findings = []
    first, last = r.span
    if last < first:
        findings.append(Finding("span_length", f"span {r.span} is shorter than one day"))
    if r.demographics is None:
        findings.append(Finding("demographics", "record has no demographics row"))
    elif r.demographics.patient_id != r.patient_id:
        findings.append(Finding("demographics", "demographics belong to another patient"))

    for modality, evs in r.events.items():
        prev = None
        for i, ev in enumerate(evs):
            where = dict(modality=modality, event_index=i)
            if ev.modality != modality:
                findings.append(Finding("modality", f"event filed under {modality} has modality {ev.modality}", **where))
            if ev.patient_id != r.patient_id:
                findings.append(Finding("patient_id", f"event belongs to patient {ev.patient_id!r}", **where))
            if ev.day < 0:
                findings.append(Finding("day_nonnegative", f"day {ev.day} < 0", **where))
            if not first <= ev.day <= last:
                findings.append(Finding("span_covers_events", f"day {ev.day} outside span {r.span}", **where))
            if prev is not None and ev.day < prev:
                findings.append(Finding("sorted", f"day {ev.day} follows day {prev}", **where))
            prev = ev.day
            if ev.modality == MEASUREMENT:
                if ev.value is None or not math.isfinite(ev.value):
                    findings.append(Finding("finite_value", f"measurement {ev.variable_id!r} value {ev.value!r} is not finite", **where))
            elif ev.value is not None:
                findings.append(Finding("no_value", f"{ev.modality} event carries a value", **where))
    return findings


def population_statistics(records: Iterable[PatientRecord]) -> PopulationStats:
    """Median of every observed measurement variable and per-variable counts."""
    values: dict[str, list[float]] = defaultdict(list)
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for r in records:
        for ev in r.all_events():
            counts[(ev.modality, ev.variable_id)] += 1
            if ev.modality == MEASUREMENT:
                values[ev.variable_id].append(ev.value)
    # np.median averages the two central values for even counts
    medians = {v: float(np.median(np.asarray(vals, dtype=float))) for v, vals in values.items()}
    return PopulationStats(medians, dict(counts))


def freeze_vocabulary(records, sex_categories=None, race_categories=None) -> VariableVocabulary:
    """Fix the row order used by all curvesets and matrices.

    Measurements, condition codes and medications each in lexicographic
    order, then one row per sex category, one per race category, then age.
    Category sets default to the sorted values seen in the records.
    """
    records = list(records)
    if not records:
        raise ValidationError("cannot freeze a vocabulary from zero records")
    ids: dict[str, set[str]] = {m: set() for m in CURVE_MODALITIES}
    for r in records:
        for m in CURVE_MODALITIES:
            ids[m].update(ev.variable_id for ev in r.events.get(m, ()))
    if sex_categories is None:
        sex_categories = {r.demographics.sex for r in records if r.demographics}
    if race_categories is None:
        race_categories = {r.demographics.race for r in records if r.demographics}
    sex = tuple(sorted(sex_categories))
    race = tuple(sorted(race_categories))

    rows = [(v, m) for m in CURVE_MODALITIES for v in sorted(ids[m])]
    rows += [(f"sex={c}", DEMOGRAPHIC) for c in sex]
    rows += [(f"race={c}", DEMOGRAPHIC) for c in race]
    rows.append((AGE_ROW, DEMOGRAPHIC))
    return VariableVocabulary(tuple(rows), sex, race)
