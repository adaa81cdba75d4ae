import random

import numpy as np
import pytest

from causal_sources import ingest as ing
from causal_sources.exceptions import ValidationError

HEADER = "patient_id,day,modality,variable_id,value\n"
DEMO = "patient_id,sex,race,birth_day\n"


def _table(rows):
    return HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows)


def test_three_rows_one_patient():
    text = _table([("p1", 0, "measurement", "hb", 5.0), ("p1", 10, "condition_code", "I10", ""),
                   ("p1", 10, "medication", "statin", "")])
    (r,) = ing.parse_events(text, DEMO + "p1,F,X,-1000\n")
    assert r.patient_id == "p1"
    assert r.span == (0, 10)
    assert r.events[ing.MEASUREMENT][0].value == 5.0
    assert ing.validate_record(r) == []


def test_empty_stream():
    assert ing.parse_events(b"") == []
    assert ing.parse_events(HEADER) == []


def test_interleaved_patients_match_naive_grouping():
    rnd = random.Random(3)
    rows = [(rnd.choice("ab"), rnd.randrange(50), "measurement", rnd.choice(["x", "y"]), rnd.random())
            for _ in range(200)]
    records = ing.parse_events(_table(rows))
    # naive oracle: one pass per patient, stable sort on day
    for r in records:
        mine = [row for row in rows if row[0] == r.patient_id]
        expect = sorted(mine, key=lambda t: t[1])
        got = [(e.patient_id, e.day, e.modality, e.variable_id, e.value) for e in r.events[ing.MEASUREMENT]]
        assert got == expect
    assert [r.patient_id for r in records] == list(dict.fromkeys(row[0] for row in rows))


@pytest.mark.parametrize("row, needle", [
    (("p", "x", "measurement", "v", 1), "line 2: day must be an integer"),
    (("p", -1, "measurement", "v", 1), "line 2: day must be >= 0"),
    (("p", 0, "lab", "v", 1), "line 2: unknown modality"),
    (("p", 0, "measurement", "v", ""), "line 2: measurement 'v' has no value"),
    (("p", 0, "measurement", "v", "nan"), "line 2: measurement 'v' has non-finite value"),
    (("p", 0, "condition_code", "c", "1"), "line 2: condition_code rows must leave value empty"),
])
def test_bad_rows_report_line_numbers(row, needle):
    with pytest.raises(ValidationError, match=needle):
        ing.parse_events(_table([row]))


def test_bad_header_and_field_count():
    with pytest.raises(ValidationError, match="line 1"):
        ing.parse_events("a,b,c,d,e\n")
    with pytest.raises(ValidationError, match="line 3: expected 5 fields"):
        ing.parse_events(HEADER + "p,0,measurement,v,1\np,1,measurement\n")


def test_demographics_parsing():
    demo = ing.parse_demographics(DEMO + "p1,F,X,-3652\n")
    assert demo["p1"] == ing.Demographics("p1", "F", "X", -3652)
    with pytest.raises(ValidationError, match="line 3: duplicate"):
        ing.parse_demographics(DEMO + "p1,F,X,0\np1,M,X,0\n")


def test_demographics_only_patient_kept_with_degenerate_span():
    records = ing.parse_events(_table([("p1", 3, "condition_code", "c", "")]), DEMO + "p1,F,X,0\np2,M,X,0\n")
    assert [r.patient_id for r in records] == ["p1", "p2"]
    assert records[1].span == (0, 0) and records[1].events == {}
    assert ing.validate_record(records[1]) == []


def _record(events, span):
    by = {}
    for e in events:
        by.setdefault(e.modality, []).append(e)
    return ing.PatientRecord("p", by, ing.Demographics("p", "F", "X", 0), span)


def test_validate_non_finite_measurement():
    r = _record([ing.EventRecord("p", 0, ing.MEASUREMENT, "v", 1.0),
                 ing.EventRecord("p", 1, ing.MEASUREMENT, "v", float("inf"))], (0, 1))
    (f,) = ing.validate_record(r)
    assert f.invariant == "finite_value" and f.event_index == 1 and "'v'" in f.message


def test_validate_span_excludes_event():
    r = _record([ing.EventRecord("p", 5, ing.CONDITION_CODE, "c")], (0, 3))
    (f,) = ing.validate_record(r)
    assert f.invariant == "span_covers_events"


def _meas_records(values):
    return [_record([ing.EventRecord("p", 0, ing.MEASUREMENT, "v", float(x))], (0, 0)) for x in values]


def test_median_odd_even():
    assert ing.population_statistics(_meas_records([1, 3, 5])).medians["v"] == 3
    assert ing.population_statistics(_meas_records([1, 3])).medians["v"] == 2


def test_median_matches_sort_oracle(rng):
    vals = rng.normal(size=100)
    s = sorted(vals)
    assert ing.population_statistics(_meas_records(vals)).medians["v"] == (s[49] + s[50]) / 2
    vals = rng.normal(size=101)
    assert ing.population_statistics(_meas_records(vals)).medians["v"] == sorted(vals)[50]


def test_counts_include_every_modality():
    r = _record([ing.EventRecord("p", 0, ing.CONDITION_CODE, "c"), ing.EventRecord("p", 1, ing.CONDITION_CODE, "c"),
                 ing.EventRecord("p", 1, ing.MEDICATION, "m")], (0, 1))
    stats = ing.population_statistics([r])
    assert stats.counts == {(ing.CONDITION_CODE, "c"): 2, (ing.MEDICATION, "m"): 1}
    assert ing.PopulationStats.from_dict(stats.to_dict()) == stats


def test_vocabulary_ordering_rule():
    recs = [_record([ing.EventRecord("p", 0, ing.MEASUREMENT, "b", 1.0),
                     ing.EventRecord("p", 0, ing.MEASUREMENT, "a", 1.0)], (0, 0))]
    vocab = ing.freeze_vocabulary(recs, {"M", "F"}, {"X"})
    assert [v for v, _ in vocab.rows] == ["a", "b", "sex=F", "sex=M", "race=X", "age"]
    assert ing.freeze_vocabulary(recs, {"M", "F"}, {"X"}) == vocab
    assert ing.VariableVocabulary.from_dict(vocab.to_dict()).hash() == vocab.hash()


def test_vocabulary_row_count_on_random_corpus():
    rnd = random.Random(11)
    rows, truth = [], {m: set() for m in ing.CURVE_MODALITIES}
    for j in range(40):
        for _ in range(10):
            m = rnd.choice(ing.CURVE_MODALITIES)
            v = f"{m[:3]}{rnd.randrange(50)}"
            truth[m].add(v)
            rows.append((f"p{j}", rnd.randrange(30), m, v, 1.0 if m == ing.MEASUREMENT else ""))
    demo = DEMO + "".join(f"p{j},{'FM'[j % 2]},{'XYZ'[j % 3]},0\n" for j in range(40))
    vocab = ing.freeze_vocabulary(ing.parse_events(_table(rows), demo))
    assert len(vocab) == sum(len(s) for s in truth.values()) + 2 + 3 + 1
    assert len(set(vocab.rows)) == len(vocab)


def test_round_trip_serialization():
    text = _table([("p2", 4, "medication", "m", ""), ("p1", 0, "measurement", "v", 0.1),
                   ("p1", 2, "reconciliation", "*", ""), ("p2", 1, "condition_code", "c", "")])
    demo = DEMO + "p1,F,X,-10\np2,M,Y,-20\n"
    records = ing.parse_events(text, demo)
    again = ing.parse_events(ing.serialize_events(records), ing.serialize_demographics(records))
    assert again == records
