import numpy as np
import pytest
from scipy.interpolate import PchipInterpolator

from causal_sources import curves as cv
from causal_sources import ingest as ing
from causal_sources.exceptions import ValidationError


def fc_reference(xs, ys, t):
    """Scalar Fritsch-Carlson evaluation written out term by term."""
    n = len(xs)
    h = [xs[i + 1] - xs[i] for i in range(n - 1)]
    m = [(ys[i + 1] - ys[i]) / h[i] for i in range(n - 1)]
    d = [0.0] * n
    for i in range(1, n - 1):
        if m[i - 1] * m[i] > 0:
            w1, w2 = 2 * h[i] + h[i - 1], h[i] + 2 * h[i - 1]
            d[i] = (w1 + w2) / (w1 / m[i - 1] + w2 / m[i])

    def end(h0, h1, m0, m1):
        e = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
        if np.sign(e) != np.sign(m0):
            return 0.0
        if np.sign(m0) != np.sign(m1) and abs(e) > abs(3 * m0):
            return 3 * m0
        return e

    d[0] = end(h[0], h[1], m[0], m[1])
    d[-1] = end(h[-1], h[-2], m[-1], m[-2])
    k = max(i for i in range(n - 1) if xs[i] <= t)
    s = (t - xs[k]) / h[k]
    return ((1 + 2 * s) * (1 - s) ** 2 * ys[k] + s * (1 - s) ** 2 * h[k] * d[k]
            + s * s * (3 - 2 * s) * ys[k + 1] + s * s * (s - 1) * h[k] * d[k + 1])


def test_pchip_constant_data():
    c = cv.interpolate_measurement([(0, 1.0), (10, 1.0)], (0, 10))
    assert np.all(c.values == 1.0)


def test_pchip_three_nodes():
    c = cv.interpolate_measurement([(0, 0.0), (5, 10.0), (20, 12.0)], (0, 20))
    assert (c.at(0), c.at(5), c.at(20)) == (0.0, 10.0, 12.0)
    seg = c.values[:6]
    assert np.all(np.diff(seg) >= 0) and seg.min() >= 0 and seg.max() <= 10


def test_pchip_flat_tail_value():
    # node 1 sits between secants 1 and 0, so its slope is 0; the right end slope is 0 too
    c = cv.interpolate_measurement([(0, 0.0), (1, 1.0), (3, 1.0)], (0, 3))
    assert c.at(2) == 1.0
    assert c.at(2) == fc_reference([0, 1, 3], [0.0, 1.0, 1.0], 2)


def test_pchip_matches_reference_and_scipy(rng):
    for _ in range(50):
        xs = np.sort(rng.choice(200, size=rng.integers(3, 12), replace=False))
        ys = rng.normal(size=len(xs))
        c = cv.interpolate_measurement(list(zip(xs, ys)), (int(xs[0]), int(xs[-1])))
        days = np.arange(xs[0], xs[-1] + 1)
        ref = np.array([fc_reference(list(xs), list(ys), t) for t in days[:-1]] + [ys[-1]])
        assert np.allclose(c.values, ref, atol=1e-12, rtol=0)
        assert np.allclose(c.values, PchipInterpolator(xs, ys)(days), atol=1e-12, rtol=0)


def test_pchip_holds_ends_outside_observations():
    c = cv.interpolate_measurement([(3, 2.0), (6, 5.0)], (0, 9))
    assert np.all(c.values[:4] == 2.0) and np.all(c.values[6:] == 5.0)
    assert np.all(cv.interpolate_measurement([(4, 7.0)], (0, 9)).values == 7.0)


def test_pchip_rejects_bad_input():
    with pytest.raises(ValidationError):
        cv.interpolate_measurement([], (0, 3))
    with pytest.raises(ValidationError):
        cv.interpolate_measurement([(1, 1.0), (1, 2.0)], (0, 3))
    with pytest.raises(ValidationError):
        cv.interpolate_measurement([(5, 1.0)], (0, 3))


def test_rash_single_event_mass():
    c = cv.code_intensity([100], (0, 200), rng=0)
    assert 0.95 <= np.trapezoid(c.values) <= 1.05
    assert abs(c.values.sum() - 1.0) < 1e-12


def test_rash_uniform_events_are_flat():
    # 100 events spread evenly over [0, 999]
    events = np.round(np.linspace(0, 999, 100)).astype(int)
    c = cv.code_intensity(events, (0, 999), n_histograms=64, bandwidth_fraction=0.1, rng=7)
    assert c.values.max() / c.values.min() < 2.0


def test_rash_determinism_and_seed_dependence():
    ev = [3, 40, 41, 90]
    a = cv.code_intensity(ev, (0, 120), rng=5).values
    assert np.array_equal(a, cv.code_intensity(ev, (0, 120), rng=5).values)
    assert not np.array_equal(a, cv.code_intensity(ev, (0, 120), rng=6).values)


def test_rash_rejects_events_off_grid():
    with pytest.raises(ValidationError):
        cv.code_intensity([130], (0, 120), rng=0)


@pytest.mark.parametrize("mentions, recon, lo, hi", [
    ([10, 50], [], 10, 50),
    ([10], [40], 10, 39),
    ([50], [20, 80], 21, 79),
])
def test_medication_closed_forms(mentions, recon, lo, hi):
    c = cv.medication_curve(mentions, recon, (0, 100))
    days = np.arange(101)
    assert np.array_equal(c.values, ((days >= lo) & (days <= hi)).astype(float))


def test_demographic_curves():
    d = ing.Demographics("p", "F", "X", -3652)
    sex_f, sex_m, race_x, age = cv.demographic_curves(d, (0, 365), ("F", "M"), ("X",))
    assert np.all(sex_f.values == 1) and np.all(sex_m.values == 0) and np.all(race_x.values == 1)
    assert age.at(0) == pytest.approx(3652 / 365.25)
    assert age.at(365) - age.at(0) == pytest.approx(365 / 365.25)
    assert np.allclose(np.diff(age.values), 1 / 365.25, rtol=0, atol=1e-12)


def test_impute_missing_forced_values():
    stats = ing.PopulationStats({"v": 3.0}, {})
    assert np.all(cv.impute_missing("v", ing.MEASUREMENT, (0, 9), stats).values == 3.0)
    code = cv.impute_missing("c", ing.CONDITION_CODE, (0, 9), stats).values
    assert np.all(code == 1 / 7305) and code[0] == pytest.approx(1.369e-4, rel=1e-3)
    assert np.all(cv.impute_missing("m", ing.MEDICATION, (0, 9), stats).values == 0.0)
    assert cv.impute_missing("m", ing.MEDICATION, (0, 9), stats).provenance == cv.IMPUTED


def _corpus(n_patients, rng):
    rows = ["patient_id,day,modality,variable_id,value"]
    demo = ["patient_id,sex,race,birth_day"]
    for j in range(n_patients):
        for m, names in ((ing.MEASUREMENT, "abc"), (ing.CONDITION_CODE, "de"), (ing.MEDICATION, "f")):
            for v in names:
                if rng.random() < 0.5:
                    for day in rng.choice(60, size=rng.integers(1, 4), replace=False):
                        val = f"{rng.normal():.6f}" if m == ing.MEASUREMENT else ""
                        rows.append(f"p{j},{day},{m},{v},{val}")
        rows.append(f"p{j},0,condition_code,anchor,")
        demo.append(f"p{j},{'FM'[j % 2]},X,-9000")
    return ing.parse_events("\n".join(rows) + "\n", "\n".join(demo) + "\n")


def test_build_curveset_counts():
    rec = ing.PatientRecord("p", {ing.MEASUREMENT: [ing.EventRecord("p", 2, ing.MEASUREMENT, "a", 1.0)]},
                            ing.Demographics("p", "F", "X", 0), (0, 9))
    events = (("a", ing.MEASUREMENT), ("b", ing.MEASUREMENT), ("c", ing.CONDITION_CODE),
              ("d", ing.CONDITION_CODE), ("e", ing.MEDICATION), ("f", ing.MEDICATION))
    demo = (("sex=F", ing.DEMOGRAPHIC), ("race=X", ing.DEMOGRAPHIC), ("age", ing.DEMOGRAPHIC))
    vocab = ing.VariableVocabulary(events + demo, ("F",), ("X",))
    cs = cv.build_curveset(rec, ing.PopulationStats({"a": 1.0, "b": 2.0}, {}), vocab)
    event_curves = cs.curves[:6]
    assert sum(c.provenance == cv.OBSERVED for c in event_curves) == 1
    # demographic rows come from the demographics row and are never imputed
    assert cs.n_imputed == 5
    assert cs.values.shape == (9, 10)


def test_imputed_fraction_matches_counting_oracle(rng):
    records = _corpus(30, rng)
    stats, vocab = ing.population_statistics(records), ing.freeze_vocabulary(records)
    sets = [cv.build_curveset(r, stats, vocab, seed=1) for r in records]
    event_rows = [(v, m) for v, m in vocab.rows if m != ing.DEMOGRAPHIC]
    observed = sum(len({(e.variable_id, e.modality) for e in r.all_events()}) for r in records)
    imputed = sum(cs.n_imputed for cs in sets)
    assert imputed / (len(records) * len(event_rows)) == pytest.approx(1 - observed / (len(records) * len(event_rows)))
    for r, cs in zip(records, sets):
        assert all(len(c.values) == r.span_days for c in cs.curves)
        assert len(cs.curves) == len(vocab)


def test_same_day_measurements_are_averaged():
    evs = [ing.EventRecord("p", 1, ing.MEASUREMENT, "a", 1.0), ing.EventRecord("p", 1, ing.MEASUREMENT, "a", 3.0),
           ing.EventRecord("p", 4, ing.MEASUREMENT, "a", 2.0)]
    rec = ing.PatientRecord("p", {ing.MEASUREMENT: evs}, ing.Demographics("p", "F", "X", 0), (1, 4))
    vocab = ing.freeze_vocabulary([rec])
    cs = cv.build_curveset(rec, ing.population_statistics([rec]), vocab)
    assert cs.curves[0].at(1) == 2.0


def test_reconciliation_wildcard_and_named():
    ev = {ing.MEDICATION: [ing.EventRecord("p", 10, ing.MEDICATION, "m1"), ing.EventRecord("p", 10, ing.MEDICATION, "m2")],
          ing.RECONCILIATION: [ing.EventRecord("p", 5, ing.RECONCILIATION, "*"),
                               ing.EventRecord("p", 20, ing.RECONCILIATION, "m1")]}
    rec = ing.PatientRecord("p", ev, ing.Demographics("p", "F", "X", 0), (0, 30))
    vocab = ing.freeze_vocabulary([rec])
    cs = cv.build_curveset(rec, ing.population_statistics([rec]), vocab)
    m1, m2 = cs.curves[vocab.index("m1", ing.MEDICATION)], cs.curves[vocab.index("m2", ing.MEDICATION)]
    assert np.flatnonzero(m1.values).tolist() == list(range(6, 20))
    assert np.flatnonzero(m2.values).tolist() == list(range(6, 11))


def test_curveset_dump_round_trip(rng):
    records = _corpus(3, rng)
    stats, vocab = ing.population_statistics(records), ing.freeze_vocabulary(records)
    cs = cv.build_curveset(records[0], stats, vocab, seed=2)
    back = cv.read_curveset(cv.write_curveset(cs), cs.patient_id, cs.grid[0])
    assert np.array_equal(back.values, cs.values) and back.grid == cs.grid
