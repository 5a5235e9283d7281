"""Pipeline stages: each reads and writes documented text artifacts under one output directory."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import (gm_reconstruct, gm_synth, gmf_extract, gmf_select, gp_surrogate, mode_density, mode_dnn,
               prob_space, shear_rha)
from .config import PipelineConfig
from .errors import ConfigurationError, MissingArtifactError

log = logging.getLogger(__name__)

STAGES = ("gen-gm", "extract-gmf", "mcs", "select-features", "identify-modes", "reconstruct", "train-dnn", "report")

# artifact -> stage that writes it
PRODUCER = {
    "records": "gen-gm",
    "selection.csv": "gen-gm",
    "features.csv": "extract-gmf",
    "mcs.csv": "mcs",
    "selection_report.json": "select-features",
    "selection_scores.csv": "select-features",
    "transform.json": "identify-modes",
    "surrogates.json": "identify-modes",
    "active_learning.csv": "identify-modes",
    "mode_densities.json": "identify-modes",
    "modes_summary.json": "identify-modes",
    "balanced.csv": "reconstruct",
    "balanced_summary.json": "reconstruct",
    "dnn_balanced.json": "train-dnn",
    "dnn_imbalanced.json": "train-dnn",
    "accuracy.csv": "report",
    "accuracy.txt": "report",
    "report.txt": "report",
}


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    def __init__(self, out):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return self.root / name

    def need(self, name):
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(f"{p} is missing; run the '{PRODUCER[name]}' command first")
        return p

    def record_manifest(self, stage, outputs, seed):
        """Append one manifest entry with content hashes of the stage outputs."""
        mpath = self.path("manifest.json")
        entries = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else []
        files = {}
        for name in outputs:
            p = self.path(name)
            if p.is_dir():
                for f in sorted(p.iterdir()):
                    files[f"{name}/{f.name}"] = sha256(f)
            else:
                files[name] = sha256(p)
        entries.append({"stage": stage, "seed": seed, "outputs": files})
        mpath.write_text(json.dumps(entries, indent=1) + "\n", encoding="utf-8")
        return files


def _map(jobs, fn, items):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# --- shared loaders -----------------------------------------------------------

def load_pool(ws):
    d = ws.need("records")
    with open(ws.need("selection.csv"), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["pool_id"] for r in _read_pool_index(ws)]
    records = [gm_synth.read_record(d / f"{rid}.txt") for rid in ids]
    sel = [(r["record_id"], float(r["scale"])) for r in rows]
    return records, sel


def _read_pool_index(ws):
    with open(ws.need("records") / "index.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def critical_names(cfg: PipelineConfig, ws):
    if cfg.selection.use_selected:
        rep = json.loads(ws.need("selection_report.json").read_text(encoding="utf-8"))
        names = rep["critical_features"]
    else:
        names = list(cfg.selection.critical_features)
    bad = [n for n in names if n not in gmf_extract.FEATURE_NAMES]
    if bad:
        raise ConfigurationError(f"unknown feature names {bad}")
    return names


def mcs_columns(ws, names):
    """MCS results plus the (homogeneity-scaled) features of each row's record."""
    cols = shear_rha.read_mcs_csv(ws.need("mcs.csv"))
    ids, feats = gmf_extract.read_features_csv(ws.need("features.csv"))
    pos = {rid: i for i, rid in enumerate(ids)}
    deg = np.array([gmf_extract.FEATURE_DEGREE[n] for n in gmf_extract.FEATURE_NAMES], dtype=float)
    rows = np.array([feats[pos[rid]] * s ** deg for rid, s in zip(cols["record_id"], cols.get("scale", []))])
    rows = rows.reshape(-1, len(gmf_extract.FEATURE_NAMES))
    for j, name in enumerate(gmf_extract.FEATURE_NAMES):
        cols[name] = rows[:, j]
    return cols


def structural_params(cfg, index):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, index]))
    return shear_rha.sample_structural_params(cfg.building, rng)


def _limit_state(cfg, idr):
    thr = cfg.building.idr_threshold
    idr = np.asarray(idr, dtype=float)
    if cfg.modes.limit_state == "log":
        return np.log(thr / np.maximum(idr, 1e-12))
    return thr - idr


# --- stages -------------------------------------------------------------------

def gen_gm(cfg: PipelineConfig, ws: Workspace):
    gm = cfg.ground_motion
    pool = gm_synth.generate_synthetic(cfg.gm_synth, gm.pool_size, cfg.seed)
    rdir = ws.path("records")
    rdir.mkdir(exist_ok=True)
    for old in rdir.glob("*.txt"):
        old.unlink()
    for r in pool:
        gm_synth.write_record(r, rdir / f"{r.id}.txt")
    with open(rdir / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pool_id"])
        w.writerows([r.id] for r in pool)
    chosen = []
    if gm.n_records:
        target = gm_synth.read_target_spectrum(cfg.resolve(gm.target_spectrum))
        chosen = gm_synth.select_spectrum_compatible(pool, target, gm.n_records, max_scale=gm.max_scale,
                                                     dispersion=gm.dispersion)
    with open(ws.path("selection.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "scale"])
        for idx, s in chosen:
            w.writerow([pool[idx].id, repr(float(s))])
    return ["records", "selection.csv"]


def extract_gmf(cfg, ws):
    records, _ = load_pool(ws)
    t1 = shear_rha.fundamental_period(cfg.building)
    feats = _map(cfg.jobs, lambda r: gmf_extract.extract_features(r, t1).values, records)
    gmf_extract.write_features_csv(ws.path("features.csv"), [r.id for r in records],
                                   np.array(feats).reshape(-1, len(gmf_extract.FEATURE_NAMES)))
    return ["features.csv"]


def mcs(cfg, ws):
    records, sel = load_pool(ws)
    by_id = {r.id: r for r in records}
    sel = sel[:cfg.mcs_simulations]

    def run(item):
        i, (rid, s) = item
        params = structural_params(cfg, i)
        edp = shear_rha.nonlinear_rha(cfg.building, params, gm_synth.scale(by_id[rid], s))
        return shear_rha.mcs_row(rid, s, params, edp, cfg.building.idr_threshold)

    rows = _map(cfg.jobs, run, list(enumerate(sel)))
    shear_rha.write_mcs_csv(ws.path("mcs.csv"), rows, cfg.building.n_stories)
    hist = Counter(r[-1] for r in rows)
    log.info("MCS modes: %s", dict(sorted(hist.items())))
    return ["mcs.csv"]


def select_features(cfg, ws):
    sc = cfg.selection
    names = list(gmf_extract.FEATURE_NAMES)
    cols = mcs_columns(ws, names)
    F = np.column_stack([cols[n] for n in names])
    S = np.column_stack([cols["xi"], cols["m"], cols["u_k"]])
    E = np.column_stack([cols[f"idr_{i + 1}"] for i in range(cfg.building.n_stories)])
    report = gmf_select.run_selection(F, S, E, sc.train_sizes, sc.sizes, sc.budget, top_k=sc.top_k,
                                      delta_threshold=sc.delta_threshold, seed=cfg.seed, n_starts=sc.n_starts)
    report.save(ws.path("selection_report.json"), ws.path("selection_scores.csv"))
    return ["selection_report.json", "selection_scores.csv"]


def _extra_candidates(cfg, ws, names, records, transform):
    """Unlabeled candidates beyond the MCS, each a realizable (record, scale, x_S) design.

    ``scaled``: pool records at log-uniform scales with fresh x_S draws.
    ``ball``: uniform n-ball samples mapped to physical space; the GMF part is
    reconstructed from the pool and x_S is taken as sampled.
    """
    mc = cfg.modes
    ids, feats = gmf_extract.read_features_csv(ws.need("features.csv"))
    pos = {rid: i for i, rid in enumerate(ids)}
    cidx = [gmf_extract.FEATURE_NAMES.index(k) for k in names]
    deg = np.array([gmf_extract.FEATURE_DEGREE[k] for k in names], dtype=float)
    rows, design = [], []
    if mc.pool_source == "ball":
        k = len(names)
        pool_f = np.array([feats[pos[r.id], cidx] for r in records])
        std = gm_reconstruct.FeatureStandardizer.from_pool(pool_f, names)
        ball = mode_density.n_ball_sample(transform.dim, mc.radius, mc.pool_extra, [cfg.seed, 6])
        for x in transform.from_standard_normal(ball.samples):
            res = gm_reconstruct.reconstruct_best(x[:k], pool_f, std, max_scale=cfg.reconstruct.max_scale)
            params = shear_rha.StructuralParams(float(x[k]), float(x[k + 1]), float(x[k + 2]))
            rows.append(np.concatenate((res.features, x[k:])))
            design.append((records[res.index].id, res.gamma, params))
        return np.array(rows), design
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    lo, hi = np.log(mc.pool_scale_min), np.log(mc.pool_scale_max)
    for _ in range(mc.pool_extra):
        rec = records[int(rng.integers(len(records)))]
        s = float(np.exp(rng.uniform(lo, hi)))
        params = shear_rha.sample_structural_params(cfg.building, rng)
        f = feats[pos[rec.id], cidx] * s ** deg
        rows.append(np.concatenate((f, [params.xi, params.m, params.u_k])))
        design.append((rec.id, s, params))
    return np.array(rows), design


def identify_modes(cfg, ws):
    mc = cfg.modes
    names = critical_names(cfg, ws)
    cols = mcs_columns(ws, names)
    records, _ = load_pool(ws)
    by_id = {r.id: r for r in records}
    n = len(cols["record_id"])
    gmf = np.column_stack([cols[k] for k in names]).reshape(n, len(names))
    transform = prob_space.build_transform(gmf, names, cfg.building, use_copula=mc.copula)
    X = np.column_stack((gmf, cols["xi"], cols["m"], cols["u_k"]))
    design = [(cols["record_id"][i], float(cols["scale"][i]),
               shear_rha.StructuralParams(float(cols["xi"][i]), float(cols["m"][i]), float(cols["u_k"][i])))
              for i in range(n)]
    if mc.pool_extra:
        Xe, extra = _extra_candidates(cfg, ws, names, records, transform)
        X = np.vstack((X, Xe))
        design += extra
    U = transform.to_standard_normal(X)
    n_st = cfg.building.n_stories

    def labeler(i):
        rid, s, params = design[i]
        edp = shear_rha.nonlinear_rha(cfg.building, params, gm_synth.scale(by_id[rid], s))
        return _limit_state(cfg, edp.peak_idr)

    if mc.initial >= n:
        raise ConfigurationError(f"modes.initial={mc.initial} must be below the {n} MCS rows")
    # initial labels always come from the MCS rows
    first = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5])).permutation(n)[:mc.initial]
    al = mode_density.run_active_learning(U, labeler, mc.initial, mc.budget, seed=cfg.seed,
                                          reopt_every=mc.reopt_every, n_starts=mc.n_starts,
                                          initial=sorted(first.tolist()), mean=mc.gp_mean)
    # held-out points: MCS rows never labeled (extra candidates carry no RHA result)
    held = np.setdiff1d(np.arange(n), al.labeled)
    g_all = _limit_state(cfg, np.column_stack([cols[f"idr_{i + 1}"] for i in range(n_st)]))
    r2 = []
    for j, m in enumerate(al.models):
        if held.size >= 2 and np.ptp(g_all[held, j]) > 0:
            r2.append(gp_surrogate.r_squared(m.predict(U[held])[0], g_all[held, j]))
        else:
            r2.append(None)

    ball = mode_density.n_ball_sample(transform.dim, mc.radius, mc.n_ball, [cfg.seed, 2])
    modes = mode_density.classify_modes(ball, al.models, min_support=mc.min_support)
    densities = []
    for k, (mode, pts) in enumerate(modes.items()):
        densities.append(mode_density.fit_gmm(pts, mc.n_mixture, seed=cfg.seed + k, mode=mode))

    transform.save(ws.path("transform.json"))
    with open(ws.path("surrogates.json"), "w", encoding="utf-8") as fh:
        json.dump([m.to_dict() for m in al.models], fh)
        fh.write("\n")
    al.write_log(ws.path("active_learning.csv"))
    mode_density.save_densities(densities, ws.path("mode_densities.json"))
    bits = mode_density.predicted_bits(al.models, ball.samples)
    ball_counts = Counter("".join(map(str, b)) for b in bits)
    summary = {
        "critical_features": names,
        "limit_state": mc.limit_state,
        "gp_mean": mc.gp_mean,
        "initial": al.n_initial,
        "added": al.n_added,
        "converged": al.converged,
        "pool_mcs": n,
        "pool_extra": int(U.shape[0] - n),
        "heldout_points": int(held.size),
        "heldout_r2": r2,
        "ball_counts": dict(sorted(ball_counts.items())),
        "modes": [d.mode.label for d in densities],
    }
    ws.path("modes_summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    return ["transform.json", "surrogates.json", "active_learning.csv", "mode_densities.json", "modes_summary.json"]


def load_surrogates(ws):
    with open(ws.need("surrogates.json"), encoding="utf-8") as fh:
        return [gp_surrogate.GPModel.from_dict(d) for d in json.load(fh)]


def reconstruct(cfg, ws):
    rc = cfg.reconstruct
    names = critical_names(cfg, ws)
    densities = mode_density.load_densities(ws.need("mode_densities.json"))
    transform = prob_space.JointTransform.load(ws.need("transform.json"))
    models = load_surrogates(ws)
    records, _ = load_pool(ws)
    ids, feats = gmf_extract.read_features_csv(ws.need("features.csv"))
    pool_f = feats[:, [gmf_extract.FEATURE_NAMES.index(n) for n in names]]
    cols = mcs_columns(ws, names)
    safe = shear_rha.safe_label(cfg.building.n_stories)
    safe_idx = [i for i, b in enumerate(cols["mode_bits"]) if b == safe]
    pick = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3])).permutation(len(safe_idx))
    safe_rows = []
    n_st = cfg.building.n_stories
    for p in sorted(pick[:rc.n_safe]):
        i = safe_idx[p]
        safe_rows.append(gm_reconstruct.BalancedRow(
            safe, cols["record_id"][i], float(cols["scale"][i]),
            shear_rha.StructuralParams(float(cols["xi"][i]), float(cols["m"][i]), float(cols["u_k"][i])),
            np.array([cols[n][i] for n in names]),
            np.array([cols[f"idr_{k + 1}"][i] for k in range(n_st)]),
            np.array([cols[f"pfa_{k + 1}"][i] for k in range(n_st)]), safe))
    ds = gm_reconstruct.assemble_balanced_dataset(densities, rc.per_mode, models, transform, records, pool_f,
                                                  names, cfg.building, safe_rows, seed=cfg.seed,
                                                  max_scale=rc.max_scale)
    ds.write_csv(ws.path("balanced.csv"))
    ds.write_summary(ws.path("balanced_summary.json"))
    return ["balanced.csv", "balanced_summary.json"]


def dnn_datasets(cfg, ws):
    names = critical_names(cfg, ws)
    n_st = cfg.building.n_stories
    bal = gm_reconstruct.read_balanced_csv(ws.need("balanced.csv"))
    imb = mcs_columns(ws, names)
    out = {}
    for key, cols, labels in (("balanced", bal, "realized_mode"), ("imbalanced", imb, "mode_bits")):
        X = mode_dnn.build_features(cols, names, n_st)
        Y = mode_dnn.mode_bits_matrix(cols[labels]).reshape(-1, n_st)
        tr, te = mode_dnn.split_indices(X.shape[0], cfg.dnn.split_seed)
        out[key] = (X, Y, tr, te)
    return out


def train_dnn(cfg, ws):
    dc = cfg.dnn
    data = dnn_datasets(cfg, ws)
    n_st = cfg.building.n_stories
    hidden = {"balanced": dc.hidden_balanced, "imbalanced": dc.hidden_imbalanced}

    def run(key):
        X, Y, tr, _ = data[key]
        spec = mode_dnn.MLPSpec(X.shape[1], hidden[key], n_st, dc.epochs, dc.batch_size, dc.learning_rate,
                                seed=cfg.seed)
        model = mode_dnn.fit(spec, X[tr], Y[tr])
        model.save(ws.path(f"dnn_{key}.json"))

    _map(min(cfg.jobs, 2), run, ["balanced", "imbalanced"])
    return ["dnn_balanced.json", "dnn_imbalanced.json"]


def report(cfg, ws):
    data = dnn_datasets(cfg, ws)
    models = {k: mode_dnn.TrainedClassifier.load(ws.need(f"dnn_{k}.json")) for k in ("balanced", "imbalanced")}
    rows = mode_dnn.cross_evaluate(models, data)
    mode_dnn.write_report(rows, ws.path("accuracy.csv"), ws.path("accuracy.txt"))
    mcs_hist = Counter(shear_rha.read_mcs_csv(ws.need("mcs.csv"))["mode_bits"])
    summary = json.loads(ws.need("modes_summary.json").read_text(encoding="utf-8"))
    bal = json.loads(ws.need("balanced_summary.json").read_text(encoding="utf-8"))
    lines = ["MCS failure-mode histogram"]
    lines += [f"  {k}: {v}" for k, v in sorted(mcs_hist.items())]
    lines += ["", f"identified modes: {', '.join(summary['modes'])}",
              f"adaptive evaluations: {summary['added']} (converged: {summary['converged']})",
              "held-out surrogate R^2: " + ", ".join("n/a" if r is None else f"{r:.4f}" for r in summary["heldout_r2"]),
              "", "balanced dataset realized counts"]
    lines += [f"  {k}: {v}" for k, v in bal["realized_counts"].items()]
    lines += ["", ws.path("accuracy.txt").read_text(encoding="utf-8").rstrip()]
    ws.path("report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ["accuracy.csv", "accuracy.txt", "report.txt"]


RUNNERS = {
    "gen-gm": gen_gm,
    "extract-gmf": extract_gmf,
    "mcs": mcs,
    "select-features": select_features,
    "identify-modes": identify_modes,
    "reconstruct": reconstruct,
    "train-dnn": train_dnn,
    "report": report,
}


def run_stage(name, cfg, ws=None):
    ws = ws or Workspace(cfg.out)
    if name == "select-features" and not cfg.selection.enabled:
        log.info("feature selection disabled in the config; skipping")
        return {}
    log.info("stage %s", name)
    outputs = RUNNERS[name](cfg, ws)
    return ws.record_manifest(name, outputs, cfg.seed)


def run_all(cfg):
    ws = Workspace(cfg.out)
    return {name: run_stage(name, cfg, ws) for name in STAGES}
