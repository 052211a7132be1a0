"""featurize -> train -> predict, driven by one ExperimentConfig."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .cache import FeatureCache, cache_dir, cache_path, read_header
from .conformal import GraphFeatures, calibration_records, conditional_prediction_set, evaluate_sets
from .config import ExperimentConfig
from .errors import StateError
from .graph import load_tudataset, num_classes, split_dataset
from .model import embed_samples, load_checkpoint, make_sample, predict_proba, save_checkpoint, train
from .persistence import PIConfig, fit_grids, graph_topology, pi_tensor_from_topology
from .synthetic import separable_dataset

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "calib", "test")
MEASURE_SUFFIX = {"topological": "T", "embedding": "E"}


def load_data(cfg: ExperimentConfig) -> list:
    d = cfg.dataset
    if d.name == "synthetic":
        return separable_dataset(d.synthetic_graphs, d.seed)
    return load_tudataset(Path(d.root) / d.name, d.name)


def pi_config(cfg: ExperimentConfig) -> PIConfig:
    t = cfg.topology
    return PIConfig(tuple(t.filtrations), t.resolution, t.bandwidth_frac, t.pad_frac)


def feature_cache_path(cfg: ExperimentConfig, root=None) -> Path:
    return cache_path(cache_dir(root or "cache"), cfg.dataset.name, cfg.feature_hash())


def featurize(cfg: ExperimentConfig, root=None, force: bool = False):
    """Returns ``(path, computed)``; skips work when a matching cache exists."""
    path = feature_cache_path(cfg, root)
    if path.exists() and not force:
        header, _ = read_header(path)
        if header.get("feature_hash") == cfg.feature_hash():
            log.info("cache up to date: %s", path)
            return path, False
    data = load_data(cfg)
    split = split_dataset(len(data), cfg.dataset.ratios, cfg.dataset.seed)
    pic = pi_config(cfg)
    graphs = [d.graph for d in data]
    job = partial(graph_topology, filtrations=pic.filtrations)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            topos = list(pool.map(job, graphs, chunksize=8))
    else:
        topos = [job(g) for g in graphs]
    fit_on = list(split.train) + list(split.calib)
    grids = fit_grids([topos[i] for i in fit_on], pic)
    pis = np.stack([pi_tensor_from_topology(t, pic, grids) for t in topos])
    pi_scale = pis[list(split.train)].max(axis=(0, 3, 4))
    cache = FeatureCache(cfg.feature_hash(), cfg.dataset.name, pic.filtrations,
                         np.array([d.label for d in data]),
                         {k: np.array(v, dtype=np.int64) for k, v in split.as_dict().items()}, topos, grids, pis, pi_scale)
    cache.save(path)
    log.info("wrote %s (%d graphs)", path, len(data))
    return path, True


def open_cache(cfg: ExperimentConfig, root=None) -> FeatureCache:
    path = feature_cache_path(cfg, root)
    if not path.exists():
        raise StateError(f"no feature cache for this config at {path}; run `cft2nn featurize` first")
    return FeatureCache.load(path)


def run_paths(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.output_dir)
    paths = {"checkpoint": out / "model.ckpt", "train_log": out / "train_log.jsonl"}
    for m, s in MEASURE_SUFFIX.items():
        paths[f"results_{s}"] = out / f"results_{s}.jsonl"
        paths[f"metrics_{s}"] = out / f"metrics_{s}.txt"
    return paths


def _stamp(cfg):
    return {"config_hash": cfg.hash(), "version": __version__}


def _samples(cfg, data, cache, indices):
    pis = cache.scaled_pis
    m = cfg.model
    return [make_sample(data[i].graph, pis[i], int(cache.labels[i]), m.tau, m.literal_adjacency) for i in indices]


def _write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def train_stage(cfg: ExperimentConfig, root=None):
    cache = open_cache(cfg, root)
    data = load_data(cfg)
    tr = _samples(cfg, data, cache, cache.splits["train"])
    va = _samples(cfg, data, cache, cache.splits["valid"])

    def report(e):
        log.info("epoch %3d  train loss %.4f acc %.3f  valid loss %.4f acc %.3f",
                 e.epoch, e.train_loss, e.train_acc, e.valid_loss, e.valid_acc)

    model, history = train(tr, va, cfg.model, num_classes(data), log=report)
    paths = run_paths(cfg)
    paths["checkpoint"].parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(paths["checkpoint"], model, cache_hash=cache.feature_hash, extra=_stamp(cfg))
    _write_jsonl(paths["train_log"], [{"type": "header", **_stamp(cfg)}] +
                 [{"type": "epoch", **vars(e)} for e in history])
    return paths["checkpoint"], history


def predict_stage(cfg: ExperimentConfig, checkpoint=None, root=None) -> dict:
    """Prediction sets for every test graph under each configured measure.

    Returns ``{measure: (SetMetrics, mode, results_path, metrics_path)}``.
    """
    cache = open_cache(cfg, root)
    paths = run_paths(cfg)
    ckpt = Path(checkpoint or paths["checkpoint"])
    if not ckpt.exists():
        raise StateError(f"checkpoint {ckpt} not found; run `cft2nn train` first")
    model, header = load_checkpoint(ckpt)
    if header.get("cache_hash") != cache.feature_hash:
        raise StateError("checkpoint was trained on a different feature cache; rerun `cft2nn train`")
    data = load_data(cfg)
    calib_idx, test_idx = cache.splits["calib"], cache.splits["test"]
    cal_s, test_s = _samples(cfg, data, cache, calib_idx), _samples(cfg, data, cache, test_idx)
    cal_p, test_p = predict_proba(model, cal_s), predict_proba(model, test_s)
    measures = cfg.conformal.measures()
    need_emb = "embedding" in measures
    cal_e = [e.z for e in embed_samples(model, cal_s)] if need_emb else None
    test_e = [e.z for e in embed_samples(model, test_s)] if need_emb else [None] * len(test_s)
    records = calibration_records(cal_p, cache.labels[calib_idx], calib_idx,
                                  [cache.topologies[i] for i in calib_idx], cal_e)
    c = cfg.conformal
    mode = "marginal" if c.k_nn >= len(records) else "conditional"
    out = {}
    for measure in measures:
        sfx = MEASURE_SUFFIX[measure]
        rows, pairs = [{"type": "header", "measure": measure, "mode": mode, **_stamp(cfg)}], []
        for j, i in enumerate(test_idx):
            target = GraphFeatures(cache.topologies[i], test_e[j])
            ps = conditional_prediction_set(test_p[j], target, records, c.k_nn, measure, c.alpha)
            y = int(cache.labels[i])
            pairs.append((ps, y))
            rows.append({"type": "result", "graph": int(i), "label": y, "p_values": list(ps.p_values),
                         "set": list(ps.labels), "size": ps.size, "neighbors": list(ps.neighbors)})
        _write_jsonl(paths[f"results_{sfx}"], rows)
        metrics = evaluate_sets(pairs)
        lines = [
            f"alpha={c.alpha}",
            f"measure={measure}",
            f"mode={mode}",
            f"k_nn={c.k_nn}",
            f"k_nn_effective={min(c.k_nn, len(records))}",
            f"n_test={metrics.n}",
            f"coverage={metrics.coverage:.6f}",
            f"avg_size={metrics.avg_size:.6f}",
            f"size_sd={metrics.size_sd:.6f}",
            f"config_hash={cfg.hash()}",
            f"version={__version__}",
        ]
        paths[f"metrics_{sfx}"].write_text("\n".join(lines) + "\n")
        out[measure] = (metrics, mode, paths[f"results_{sfx}"], paths[f"metrics_{sfx}"])
    return out
