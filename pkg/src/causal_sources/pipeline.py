"""Stage runners with on-disk artifacts and a hash-chained manifest.

Layout under the artifact directory::

    manifest.json
    ingest/   events.csv demographics.csv stats.json vocabulary.json
    curves/   values.npy index.csv [dump/*.csv]
    matrix/   matrix.csv provenance.csv standardizer.json
    ica/      model.json sources.csv
    train/    model_sources.json | model_raw.json, split.csv
    explain/  explanations.csv ranking.json ranking.txt
    eval/     report.json

Every stage checks that the upstream files it reads still hash to the values
the manifest recorded when they were written.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import ingest as ing
from ._seeding import derive_rng
from .config import PipelineConfig
from .curves import Curve, Curveset, build_curveset, write_curveset
from .exceptions import ArtifactError, ValidationError
from .explain import (
    GradientBoostedTrees,
    LogisticModel,
    evaluate,
    model_from_json,
    rank_sources,
    shap_exact_batch,
    shap_sampled,
)
from .explain.shapley import MAX_EXACT_FEATURES, read_explanations, write_explanations
from .ica import ICAModel, fit_ica, signature, transform
from .matrix import (
    RobustStandardizer,
    assemble_matrix,
    read_matrix,
    read_provenance,
    write_matrix,
    write_provenance,
)
from .oracle import (
    SyntheticSCM,
    amari_distance,
    generate_scm,
    match_sources,
    render_events,
    sample_dataset,
    true_ite,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("synth", "ingest", "curves", "matrix", "ica", "train", "explain", "eval")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest(source) -> str:
    if isinstance(source, bytes):
        return hashlib.sha256(source).hexdigest()
    return sha256_file(source)


class Manifest:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / MANIFEST
        self.stages = json.loads(self.path.read_text())["stages"] if self.path.exists() else {}

    def require(self, stage: str, *relpaths: str) -> list[Path]:
        """Paths of upstream artifacts, verified against their recorded hashes.

        ``stage`` is a manifest key; train runs are keyed ``train:<feature_space>``.
        """
        entry = self.stages.get(stage)
        hint = _rerun_hint(stage)
        if entry is None:
            raise ArtifactError(f"no '{stage}' artifacts recorded in {self.path}; run {hint} first")
        out = []
        for rel in relpaths:
            p = self.root / rel
            recorded = entry["outputs"].get(rel)
            if recorded is None or not p.exists():
                raise ArtifactError(f"artifact {rel} is missing; rerun {hint}")
            if sha256_file(p) != recorded:
                raise ArtifactError(f"artifact {rel} does not match its recorded hash; rerun {hint}")
            out.append(p)
        return out

    def outputs(self, stage: str) -> dict:
        return self.stages.get(stage, {}).get("outputs", {})

    def record(self, stage, inputs, outputs, config, wall_time):
        self.stages[stage] = {
            "inputs": {str(k): _digest(v) for k, v in sorted(inputs.items())},
            "outputs": {rel: sha256_file(self.root / rel) for rel in sorted(outputs)},
            "config": config,
            "wall_time": round(wall_time, 3),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps({"stages": self.stages}, indent=1, sort_keys=True) + "\n")


def _rerun_hint(key: str) -> str:
    stage, _, space = key.partition(":")
    return f"the '{stage}' stage" + (f" with feature_space={space}" if space else "")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _input_file(path, what) -> Path:
    if path is None:
        raise ValidationError(f"config key '{what}' is required for this stage")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what} file {p} does not exist")
    return p


def _read_input(path, what) -> bytes:
    """Table contents; ``-`` reads standard input."""
    if path == "-":
        return sys.stdin.buffer.read()
    return _input_file(path, what).read_bytes()


def _stage(name):
    def deco(fn):
        def run(cfg: PipelineConfig):
            cfg.require_seed()
            manifest = Manifest(cfg.artifact_dir)
            t0 = time.perf_counter()
            inputs, outputs, summary = fn(cfg, manifest)
            key = f"{name}:{cfg.feature_space}" if name == "train" else name
            manifest.record(key, inputs, outputs, cfg.snapshot(), time.perf_counter() - t0)
            return summary
        run.__name__ = f"run_{name}"
        run.__doc__ = fn.__doc__
        return run
    return deco


def _load_records(manifest):
    ev, demo = manifest.require("ingest", "ingest/events.csv", "ingest/demographics.csv")
    return ing.parse_events(ev.read_bytes(), ing.parse_demographics(demo.read_bytes())), {"ingest/events.csv": ev, "ingest/demographics.csv": demo}


@_stage("ingest")
def run_ingest(cfg, manifest):
    """Parse and validate the event and demographics tables."""
    if cfg.events == "-" and cfg.demographics == "-":
        raise ValidationError("only one of 'events' and 'demographics' can be read from standard input")
    events = _read_input(cfg.events, "events")
    demo = _read_input(cfg.demographics, "demographics")
    records = ing.parse_events(events, ing.parse_demographics(demo))
    problems = [(r.patient_id, f) for r in records for f in ing.validate_record(r)]
    if problems:
        pid, f = problems[0]
        raise ValidationError(f"{len(problems)} invalid records; first: patient {pid!r}: {f.message}")
    stats = ing.population_statistics(records)
    vocab = ing.freeze_vocabulary(records)
    root = cfg.artifact_dir
    _write(root / "ingest/events.csv", ing.serialize_events(records))
    _write(root / "ingest/demographics.csv", ing.serialize_demographics(records))
    _write(root / "ingest/stats.json", _dumps(stats.to_dict()))
    _write(root / "ingest/vocabulary.json", _dumps(vocab.to_dict()))
    outputs = ["ingest/events.csv", "ingest/demographics.csv", "ingest/stats.json", "ingest/vocabulary.json"]
    summary = {"records": len(records), "variables": len(vocab)}
    return {"events": events, "demographics": demo}, outputs, summary


def _load_vocab(manifest):
    stats_p, vocab_p = manifest.require("ingest", "ingest/stats.json", "ingest/vocabulary.json")
    stats = ing.PopulationStats.from_dict(json.loads(stats_p.read_text()))
    vocab = ing.VariableVocabulary.from_dict(json.loads(vocab_p.read_text()))
    return stats, vocab, {"ingest/stats.json": stats_p, "ingest/vocabulary.json": vocab_p}


@_stage("curves")
def run_curves(cfg, manifest):
    """Build every patient's curveset."""
    records, inputs = _load_records(manifest)
    stats, vocab, more = _load_vocab(manifest)
    inputs.update(more)
    seed = cfg.require_seed()
    root = cfg.artifact_dir
    blocks, rows, outputs = [], ["patient_id,first_day,last_day,offset,n_imputed,imputed_rows"], []
    offset = 0
    for i, r in enumerate(records):
        cs = build_curveset(r, stats, vocab, cfg.n_histograms, cfg.bandwidth_fraction, seed)
        blocks.append(cs.values)
        imputed = ";".join(str(j) for j, c in enumerate(cs.curves) if c.provenance == "imputed")
        rows.append(f"{cs.patient_id},{cs.grid[0]},{cs.grid[1]},{offset},{cs.n_imputed},{imputed}")
        offset += cs.values.shape[1]
        if cfg.curve_dump:
            rel = f"curves/dump/{i:06d}.csv"
            _write(root / rel, write_curveset(cs))
            outputs.append(rel)
    values = np.hstack(blocks) if blocks else np.zeros((len(vocab), 0))
    (root / "curves").mkdir(parents=True, exist_ok=True)
    np.save(root / "curves/values.npy", values)
    _write(root / "curves/index.csv", "\n".join(rows) + "\n")
    outputs += ["curves/values.npy", "curves/index.csv"]
    return inputs, outputs, {"curvesets": len(records)}


def load_curvesets(root: Path, vocab_hash: str) -> list[Curveset]:
    values = np.load(root / "curves/values.npy")
    out = []
    for ln in (root / "curves/index.csv").read_text().splitlines()[1:]:
        pid, first, last, offset, _, imputed = ln.rsplit(",", 5)
        first, last, offset = int(first), int(last), int(offset)
        imp = {int(j) for j in imputed.split(";") if j}
        block = values[:, offset:offset + last - first + 1]
        curves = [Curve(first, block[j], "imputed" if j in imp else "observed") for j in range(block.shape[0])]
        out.append(Curveset(pid, (first, last), curves, vocab_hash, block))
    return out


@_stage("matrix")
def run_matrix(cfg, manifest):
    """Sample cross sections, stack and standardize them."""
    _, vocab, inputs = _load_vocab(manifest)
    paths = manifest.require("curves", "curves/values.npy", "curves/index.csv")
    inputs.update(zip(("curves/values.npy", "curves/index.csv"), paths))
    curvesets = load_curvesets(cfg.artifact_dir, vocab.hash())
    M = assemble_matrix(curvesets, cfg.density, cfg.require_seed())
    std = RobustStandardizer().fit(M.values.T)
    X_std = std.transform(M.values.T).T
    root = cfg.artifact_dir
    _write(root / "matrix/matrix.csv", write_matrix(X_std, vocab.hash()))
    _write(root / "matrix/provenance.csv", write_provenance(M.provenance))
    _write(root / "matrix/standardizer.json", _dumps(std.to_dict()))
    outputs = ["matrix/matrix.csv", "matrix/provenance.csv", "matrix/standardizer.json"]
    return inputs, outputs, {"rows": X_std.shape[0], "columns": X_std.shape[1]}


def _load_matrix(manifest):
    m, p, s = manifest.require("matrix", "matrix/matrix.csv", "matrix/provenance.csv", "matrix/standardizer.json")
    X, vocab_hash = read_matrix(m.read_text())
    prov = read_provenance(p.read_text())
    std = RobustStandardizer.from_dict(json.loads(s.read_text()))
    inputs = {"matrix/matrix.csv": m, "matrix/provenance.csv": p, "matrix/standardizer.json": s}
    return X, prov, std, vocab_hash, inputs


@_stage("ica")
def run_ica(cfg, manifest):
    """Fit FastICA on the standardized matrix and store the sources."""
    X, prov, _, vocab_hash, inputs = _load_matrix(manifest)
    _, vocab, more = _load_vocab(manifest)
    inputs.update(more)
    model = fit_ica(X, min(cfg.k, X.shape[0], X.shape[1] - 1), cfg.contrast, cfg.tol, cfg.max_iter,
                    cfg.require_seed(), strict=cfg.strict_rank)
    model.vocabulary_hash = vocab_hash
    model.variable_names = vocab.labels
    S = transform(model, X).values
    root = cfg.artifact_dir
    _write(root / "ica/model.json", model.to_json() + "\n")
    _write(root / "ica/sources.csv", write_matrix(S, vocab_hash))
    return inputs, ["ica/model.json", "ica/sources.csv"], dict(model.convergence)


def _read_labels(path) -> dict[str, int]:
    lines = _input_file(path, "labels").read_text().splitlines()
    if not lines or lines[0].strip() != "patient_id,label":
        raise ValidationError("labels file must start with header 'patient_id,label'", 1)
    out = {}
    for n, ln in enumerate(lines[1:], 2):
        if not ln.strip():
            continue
        pid, lab = (s.strip() for s in ln.rsplit(",", 1))
        if lab not in ("0", "1"):
            raise ValidationError(f"label must be 0 or 1, got {lab!r}", n)
        out[pid] = int(lab)
    return out


def _is_test(seed, pid, fraction) -> bool:
    return derive_rng(seed, "split", pid).random() < fraction


def _features(cfg, manifest, space):
    X, prov, _, vocab_hash, inputs = _load_matrix(manifest)
    if space == "sources":
        (src,) = manifest.require("ica", "ica/sources.csv")
        X, _ = read_matrix(src.read_text())
        inputs["ica/sources.csv"] = src
    elif space != "raw":
        raise ValidationError(f"feature_space must be 'sources' or 'raw', got {space!r}")
    return X, prov, inputs


def _cohort(cfg, prov):
    """Labels, test flags and labeled mask per matrix column."""
    labels = _read_labels(cfg.labels)
    seed = cfg.require_seed()
    y = np.array([labels.get(p, -1) for p, _ in prov])
    test = np.array([_is_test(seed, p, cfg.test_fraction) for p, _ in prov])
    labeled = y >= 0
    return y, test, labeled


@_stage("train")
def run_train(cfg, manifest):
    """Fit H_c on sources or H_a on raw cross sections (``feature_space``)."""
    X, prov, inputs = _features(cfg, manifest, cfg.feature_space)
    inputs["labels"] = _input_file(cfg.labels, "labels")
    y, test, labeled = _cohort(cfg, prov)
    train = labeled & ~test
    if not train.any():
        raise ValidationError("no labeled training columns")
    if cfg.model_kind == "boosted_trees":
        model = GradientBoostedTrees(cfg.n_rounds, cfg.learning_rate, cfg.max_depth, cfg.min_samples_leaf,
                                     cfg.feature_space, cfg.require_seed())
    elif cfg.model_kind == "logistic":
        model = LogisticModel(cfg.logistic_alpha, feature_space=cfg.feature_space, random_state=cfg.require_seed())
    else:
        raise ValidationError(f"unknown model_kind {cfg.model_kind!r}")
    model.fit(X[:, train].T, y[train])
    extra = {"feature_space": cfg.feature_space, "upstream": {k: sha256_file(v) for k, v in sorted(inputs.items())}}
    root = cfg.artifact_dir
    rel = f"train/model_{cfg.feature_space}.json"
    _write(root / rel, model.to_json(**extra) + "\n")
    pids = sorted({p for p, _ in prov})
    split = "patient_id,split\n" + "".join(
        f"{p},{'test' if _is_test(cfg.require_seed(), p, cfg.test_fraction) else 'train'}\n" for p in pids)
    _write(root / "train/split.csv", split)
    summary = {"model": rel, "train_columns": int(train.sum())}
    if (labeled & test).any() and len(np.unique(y[labeled & test])) == 2:
        summary.update({f"test_{k}": v for k, v in evaluate(model, X[:, labeled & test].T, y[labeled & test]).items()})
    return inputs, [rel, "train/split.csv"], summary


def background_columns(cfg, y, test, labeled) -> np.ndarray:
    pool = labeled & ~test
    if cfg.background == "negative":
        pool &= y == 0
    elif cfg.background != "all":
        raise ValidationError(f"background must be 'all' or 'negative', got {cfg.background!r}")
    idx = np.nonzero(pool)[0]
    if idx.size == 0:
        raise ValidationError("background pool is empty")
    rng = derive_rng(cfg.require_seed(), "background")
    return np.sort(rng.choice(idx, size=min(cfg.background_size, idx.size), replace=False))


@_stage("explain")
def run_explain(cfg, manifest):
    """Shapley values for each labeled column plus the source ranking report."""
    rel = f"train/model_{cfg.feature_space}.json"
    (model_p,) = manifest.require(f"train:{cfg.feature_space}", rel)
    model = model_from_json(model_p.read_text())
    X, prov, inputs = _features(cfg, manifest, cfg.feature_space)
    inputs[rel] = model_p
    inputs["labels"] = _input_file(cfg.labels, "labels")
    y, test, labeled = _cohort(cfg, prov)
    bg = X[:, background_columns(cfg, y, test, labeled)].T
    if cfg.explain_columns == "all":
        cols = np.nonzero(labeled)[0]
    elif cfg.explain_columns == "test":
        cols = np.nonzero(labeled & test)[0]
    else:
        raise ValidationError(f"explain_columns must be 'all' or 'test', got {cfg.explain_columns!r}")
    k = X.shape[0]
    estimator = cfg.shap_estimator
    if estimator == "auto":
        estimator = "exact" if k <= MAX_EXACT_FEATURES else "permutation"
    if estimator == "exact":
        expl = shap_exact_batch(model, X[:, cols].T, bg, [prov[c] for c in cols])
    elif estimator == "permutation":
        seed = cfg.require_seed()
        expl = [shap_sampled(model, X[:, c], bg, cfg.n_permutations, derive_rng(seed, "shap", c), prov[c])
                for c in cols]
    else:
        raise ValidationError(f"unknown shap_estimator {cfg.shap_estimator!r}")
    ranking = rank_sources(expl)

    names = None
    ica_model = None
    if cfg.feature_space == "sources":
        (mp,) = manifest.require("ica", "ica/model.json")
        inputs["ica/model.json"] = mp
        ica_model = ICAModel.from_json(mp.read_text())
    else:
        _, vocab, _ = _load_vocab(manifest)
        names = vocab.labels
    report = []
    lines = [f"# source ranking by mean |phi| over {len(expl)} columns ({estimator} estimator)"]
    for rank, i in enumerate(ranking.order, 1):
        entry = {"rank": rank, "index": int(i), "importance": float(ranking.importance[i])}
        if ica_model is not None:
            entry["signature"] = [[v, w] for v, w in signature(ica_model, int(i), cfg.top_m)]
            sig = ", ".join(f"{v} {w:+.3f}" for v, w in entry["signature"])
            lines.append(f"{rank:3d}. source {i:3d}  importance {entry['importance']:.4f}  signature: {sig}")
        else:
            entry["variable"] = names[i]
            lines.append(f"{rank:3d}. {names[i]}  importance {entry['importance']:.4f}")
        report.append(entry)
    root = cfg.artifact_dir
    _write(root / "explain/explanations.csv", write_explanations(expl))
    _write(root / "explain/ranking.json", _dumps({"feature_space": cfg.feature_space, "ranking": report}))
    _write(root / "explain/ranking.txt", "\n".join(lines) + "\n")
    outputs = ["explain/explanations.csv", "explain/ranking.json", "explain/ranking.txt"]
    return inputs, outputs, {"explained_columns": len(expl), "top_source": int(ranking.order[0])}


@_stage("synth")
def run_synth(cfg, manifest):
    """Synthetic corpus for the pipeline plus a separate ground-truth bundle."""
    seed = cfg.require_seed()
    scm = generate_scm(cfg.n_vars, cfg.edge_density, cfg.weight_range, seed, cfg.family)
    ds = sample_dataset(scm, cfg.n_patients, derive_rng(seed, "sample"))
    corpus = render_events(ds, cfg.span_days, derive_rng(seed, "render"), cfg.sparsity, cfg.code_fraction,
                           cfg.drift, cfg.noise, cfg.rate_scale)
    cdir, tdir = cfg.corpus_path, cfg.truth_path
    if cdir.resolve() == tdir.resolve() or tdir.resolve().is_relative_to(cdir.resolve()):
        raise ValidationError("truth_dir must lie outside the corpus directory")
    pids = [f"p{j:06d}" for j in range(ds.X_true.shape[1])]
    _write(cdir / "events.csv", ing.serialize_events(corpus.records))
    _write(cdir / "demographics.csv", ing.serialize_demographics(corpus.records))
    _write(cdir / "labels.csv", "patient_id,label\n" + "".join(f"{p},{int(v)}\n" for p, v in zip(pids, ds.Y)))
    _write(tdir / "scm.json", scm.to_json() + "\n")
    _write(tdir / "sources_true.csv", write_matrix(ds.S_true))
    _write(tdir / "truth.json", _dumps({
        "patient_ids": pids,
        "variable_ids": corpus.variable_ids,
        "code_variables": corpus.code_variables,
        "index_day": int(corpus.index_days[0]) if len(corpus.index_days) else None,
        "seed": seed,
    }))
    root = cfg.artifact_dir.resolve()
    outputs = []
    for p in (cdir / "events.csv", cdir / "demographics.csv", cdir / "labels.csv",
              tdir / "scm.json", tdir / "sources_true.csv", tdir / "truth.json"):
        # files outside the artifact tree are keyed by absolute path
        p = p.resolve()
        outputs.append(str(p.relative_to(root)) if p.is_relative_to(root) else str(p))
    return {}, outputs, {"patients": len(pids), "corpus": str(cdir), "truth": str(tdir)}


# ---------------------------------------------------------------- evaluation

def recovery_metrics(S_est, S_true) -> dict:
    """Matched |correlation| between estimated and true sources."""
    if S_est.shape[0] >= S_true.shape[0]:
        perm, signs, corr = match_sources(S_est, S_true)
    else:
        back, signs_b, corr_b = match_sources(S_true, S_est)
        perm = np.full(S_est.shape[0], -1)
        signs = np.zeros(S_est.shape[0])
        corr = np.full(S_est.shape[0], np.nan)
        perm[back] = np.arange(S_true.shape[0])
        signs[back] = signs_b
        corr[back] = corr_b
    matched = corr[~np.isnan(corr)]
    return {"perm": perm, "signs": signs, "matched_abs_corr": matched,
            "mean_matched_abs_corr": float(matched.mean())}


def parent_precision(order, perm, parents) -> float:
    """Share of true outcome parents among the top ``len(parents)`` matched sources."""
    parents = set(int(p) for p in parents)
    top = [int(perm[i]) for i in order if perm[i] >= 0][: len(parents)]
    return len(parents.intersection(top)) / len(parents)


def permutation_control(order, perm, parents, n_true, rng, n_draws=1000) -> float:
    """Mean parent precision when the source-to-truth pairing is shuffled."""
    vals = []
    for _ in range(n_draws):
        shuffled = perm.copy()
        m = shuffled >= 0
        shuffled[m] = rng.permutation(n_true)[: m.sum()]
        vals.append(parent_precision(order, shuffled, parents))
    return float(np.mean(vals))


@_stage("eval")
def run_eval(cfg, manifest):
    """Compare pipeline outputs against the synthetic ground truth."""
    tdir = cfg.truth_path
    needed = [tdir / "scm.json", tdir / "sources_true.csv", tdir / "truth.json"]
    if not all(p.exists() for p in needed):
        raise ValidationError(f"truth bundle missing under {tdir}; run 'synth' or set truth_dir")
    scm = SyntheticSCM.from_json(needed[0].read_text())
    S_true_all, _ = read_matrix(needed[1].read_text())
    truth = json.loads(needed[2].read_text())
    col_of = {p: j for j, p in enumerate(truth["patient_ids"])}

    X, prov, std, _, inputs = _load_matrix(manifest)
    (src_p, model_p) = manifest.require("ica", "ica/sources.csv", "ica/model.json")
    (hc_p,) = manifest.require("train:sources", "train/model_sources.json")
    (ha_p,) = manifest.require("train:raw", "train/model_raw.json")
    (expl_p, rank_p) = manifest.require("explain", "explain/explanations.csv", "explain/ranking.json")
    _, _, more = _load_vocab(manifest)
    inputs.update(more)
    inputs.update({"ica/sources.csv": src_p, "ica/model.json": model_p, "train/model_sources.json": hc_p,
                   "train/model_raw.json": ha_p, "explain/explanations.csv": expl_p,
                   "explain/ranking.json": rank_p, "labels": _input_file(cfg.labels, "labels")})
    for p in needed:
        inputs[str(p)] = p
    S_est, _ = read_matrix(src_p.read_text())
    ica_model = ICAModel.from_json(model_p.read_text())
    cols_true = np.array([col_of[p] for p, _ in prov])
    S_true = S_true_all[:, cols_true]

    rec = recovery_metrics(S_est, S_true)
    perm = rec["perm"]

    # Amari distance against the empirical mixing seen in the standardized matrix;
    # code rows pass through a nonlinear rate link, so the analytic A_true does not apply.
    centered = (X - X.mean(axis=1, keepdims=True)).T
    A_emp = np.linalg.lstsq(S_true.T - S_true.mean(axis=1), centered, rcond=None)[0].T
    P = ica_model.unmixing @ A_emp
    matched_rows = [int(np.nonzero(perm == j)[0][0]) for j in range(scm.n_vars) if (perm == j).any()]
    amari = amari_distance(P[matched_rows][:, [perm[i] for i in matched_rows]]) if matched_rows else float("nan")

    y, test, labeled = _cohort(cfg, prov)
    hc, ha = model_from_json(hc_p.read_text()), model_from_json(ha_p.read_text())
    held = labeled & test
    auroc_c = evaluate(hc, S_est[:, held].T, y[held])["auroc"]
    auroc_a = evaluate(ha, X[:, held].T, y[held])["auroc"]

    expl = read_explanations(expl_p.read_text())
    col_index = {pd: i for i, pd in enumerate(prov)}
    bg = background_columns(cfg, y, test, labeled)
    bg_mean = S_true[:, bg].mean(axis=1)
    est_idx = np.nonzero(perm >= 0)[0]
    phi, ite = [], []
    for e in expl:
        j = col_index[(e.provenance[0], e.provenance[1])]
        t = true_ite(scm, S_true[:, j], bg_mean)
        phi.append(e.phi[est_idx])
        ite.append(t[perm[est_idx]])
    ite_corr = float(np.corrcoef(np.ravel(phi), np.ravel(ite))[0, 1]) if phi else float("nan")

    ranking = json.loads(rank_p.read_text())["ranking"]
    order = [r["index"] for r in ranking]
    parents = scm.outcome_sources
    precision = parent_precision(order, perm, parents)
    control = permutation_control(order, perm, parents, scm.n_vars, derive_rng(cfg.require_seed(), "control"))

    report = {
        "source_recovery": {
            "matched_abs_corr": [float(c) for c in rec["matched_abs_corr"]],
            "mean_matched_abs_corr": rec["mean_matched_abs_corr"],
            "amari_distance": amari,
            "k_estimated": int(S_est.shape[0]),
            "k_true": int(scm.n_vars),
        },
        "ite_agreement": {"correlation": ite_corr, "n_explanations": len(expl)},
        "auroc": {"causal_sources": auroc_c, "baseline_raw": auroc_a, "difference": auroc_c - auroc_a},
        "parent_recovery": {
            "precision": precision,
            "permutation_control": control,
            "chance_level": len(parents) / scm.n_vars,
            "true_parents": [int(p) for p in parents],
            "top_ranked_matched": [int(perm[i]) for i in order if perm[i] >= 0][: len(parents)],
        },
    }
    _write(cfg.artifact_dir / "eval/report.json", _dumps(report))
    return inputs, ["eval/report.json"], {
        "mean_matched_abs_corr": round(rec["mean_matched_abs_corr"], 4),
        "ite_correlation": round(ite_corr, 4),
        "auroc_hc": round(auroc_c, 4),
        "auroc_ha": round(auroc_a, 4),
        "parent_precision": precision,
    }


RUNNERS = {
    "synth": run_synth,
    "ingest": run_ingest,
    "curves": run_curves,
    "matrix": run_matrix,
    "ica": run_ica,
    "train": run_train,
    "explain": run_explain,
    "eval": run_eval,
}
