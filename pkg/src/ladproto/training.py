"""The episodic training loop and its run manifest.

One step is one episode: pick a base-pool query (or a baseline roster),
build tasks, backpropagate the episode loss, and apply one optimizer
update. Everything is seeded, and parallel-free by design, so a (config,
inputs, seeds) triple reproduces the loss trace bit-for-bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .config import RunConfig
from .curation import ClipRecord
from .episodic import EpisodeConfig, ExamplePool, run_baseline_episode, run_episode
from .errors import DataError, InfeasibleTaskError
from .network import EmbeddingNetwork, Optimizer, init_parameters, save_checkpoint
from .taxonomy import Taxonomy


@dataclass
class TrainResult:
    net: EmbeddingNetwork
    loss_trace: list[float]
    transcript: list[dict]


def build_pool(
    classes,
    records: tuple[ClipRecord, ...],
    features: Mapping[str, np.ndarray],
) -> ExamplePool:
    labels_by_id = {r.clip_id: r.labels for r in records if r.clip_id in features}
    return ExamplePool(classes, labels_by_id, features)


def train(
    cfg: RunConfig,
    taxonomy: Taxonomy,
    base_pool: ExamplePool,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    net = init_parameters(cfg.network, cfg.init_seed)
    optimizer = cfg.make_optimizer()
    rng = np.random.default_rng(cfg.episode_seed)
    pool = base_pool.restrict_to_feasible(cfg.episode.k_shot)
    if len(pool.classes) < cfg.episode.n_way:
        raise InfeasibleTaskError(
            f"base pool has {len(pool.classes)} feasible classes; episodes "
            f"need {cfg.episode.n_way}"
        )
    queries = pool.query_candidates()
    if not queries and cfg.method != "baseline-protonet":
        raise DataError("base pool has no queries with in-pool labels")

    align = cfg.method == "lad-protonet"
    trace: list[float] = []
    transcript: list[dict] = []
    for step in range(cfg.train_steps):
        if cfg.method == "baseline-protonet":
            result = run_baseline_episode(pool, net, cfg.episode, rng)
        else:
            query_id = queries[rng.integers(len(queries))]
            result = run_episode(
                query_id,
                pool,
                net,
                cfg.episode,
                taxonomy,
                rng,
                align=align,
                couple=align,
            )
        result.loss.backward()
        optimizer.step(net)
        loss_value = result.loss_value
        trace.append(loss_value)
        if on_step is not None:
            on_step(step, loss_value)
        if cfg.transcript:
            transcript.append(
                {
                    "step": step,
                    "loss": loss_value,
                    "tasks": [
                        {
                            "query": tr.task.query_id,
                            "source_label": tr.task.source_label,
                            "active": tr.task.active_class,
                            "roster": list(tr.task.roster),
                            "support": {
                                c: list(ids) for c, ids in tr.task.support.items()
                            },
                            "loss": tr.loss,
                        }
                        for tr in result.tasks
                    ],
                }
            )
    return TrainResult(net=net, loss_trace=trace, transcript=transcript)


def write_run_manifest(
    path,
    cfg: RunConfig,
    input_fingerprints: Mapping[str, str],
    loss_trace,
    metrics: Mapping | None = None,
    extra: Mapping | None = None,
) -> None:
    doc = {
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "inputs": dict(input_fingerprints),
        "loss_trace": [float(x) for x in loss_trace],
        "metrics": dict(metrics) if metrics else None,
        "extra": dict(extra) if extra else {},
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_transcript(path, transcript) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in transcript:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def save_trained(
    outdir: Path, cfg: RunConfig, result: TrainResult,
    input_fingerprints: Mapping[str, str], metrics: Mapping | None = None
) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt = outdir / "checkpoint.emb"
    save_checkpoint(ckpt, result.net, seed=cfg.init_seed, step=len(result.loss_trace))
    write_run_manifest(
        outdir / "run_manifest.json",
        cfg,
        input_fingerprints,
        result.loss_trace,
        metrics=metrics,
    )
    if cfg.transcript:
        write_transcript(outdir / "episodes.jsonl", result.transcript)
    return ckpt
