"""Command-line interface: curate, synth, train, eval, sweep-beta, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error. Every subcommand takes ``--config FILE`` plus repeatable
``--set key=value`` overrides using the same flat keys as the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import curation, synth
from .config import (
    RunConfig,
    apply_overrides,
    build_run_config,
    feature_spec_from,
    load_run_config,
    read_config_file,
    synthetic_spec_from,
    tone_spec_from,
)
from .errors import ConfigError, DataError, LadProtoError
from .evaluation import evaluate_pool, format_report_table, report_rows
from .features import prepare_features
from .metrics import MetricsReport, MetricSummary
from .network import load_checkpoint
from .taxonomy import load_taxonomy_file
from .training import build_pool, save_trained, train, write_run_manifest
import hashlib

DEFAULT_BETA_GRID = (15.0, 30.0, 45.0)


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _config_from_args(args) -> RunConfig:
    overrides = _parse_overrides(args.set)
    if args.config:
        return load_run_config(args.config, overrides)
    return build_run_config(apply_overrides({}, overrides))


def _fingerprint_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _load_taxonomy(cfg: RunConfig):
    if not cfg.ontology:
        raise ConfigError("no ontology path configured (paths.ontology)")
    if not Path(cfg.ontology).is_file():
        raise DataError(f"ontology file not found: {cfg.ontology}")
    return load_taxonomy_file(cfg.ontology)


def _load_records(cfg: RunConfig):
    if not cfg.metadata:
        raise ConfigError("no metadata path configured (paths.metadata)")
    paths = cfg.metadata if isinstance(cfg.metadata, list) else [cfg.metadata]
    records: list = []
    for p in paths:
        if not Path(p).is_file():
            raise DataError(f"metadata file not found: {p}")
        records.extend(curation.read_clip_metadata(p))
    return tuple(records)


# -- subcommands ---------------------------------------------------------------


def cmd_curate(args) -> int:
    cfg = _config_from_args(args)
    taxonomy = _load_taxonomy(cfg)
    records = _load_records(cfg)
    ratio_text = ":".join(f"{r:g}" for r in cfg.ratio)
    print(
        f"curate: ratio {ratio_text}, keep depths {sorted(cfg.keep_depths)}, "
        f"seed {cfg.split_seed}, min_per_class {cfg.resolved_min_per_class}"
    )
    dataset = curation.curate(
        taxonomy,
        records,
        keep_depths=cfg.keep_depths,
        ratio=cfg.ratio,
        seed=cfg.split_seed,
        min_per_class=cfg.resolved_min_per_class,
    )
    manifest_path = cfg.resolved_split_manifest
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    curation.write_split_manifest(
        dataset,
        manifest_path,
        config={
            "ratio": list(cfg.ratio),
            "keep_depths": sorted(cfg.keep_depths),
            "seed": cfg.split_seed,
            "min_per_class": cfg.resolved_min_per_class,
        },
    )
    sizes = dataset.split.sizes()
    print(f"eligible classes: {sum(sizes)}")
    print(f"base/validation/evaluation classes: {sizes[0]}/{sizes[1]}/{sizes[2]}")
    for name in curation.POOL_NAMES:
        print(f"pool {name}: {len(dataset.pools[name])} clips")
    print(f"overlap audit: {'clean' if dataset.audit.is_empty else dataset.audit.shared}")
    print(f"manifest -> {manifest_path}")
    return 0


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out or cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    spec = synthetic_spec_from(cfg)
    taxonomy, records = curation.generate_synthetic(spec)
    from .taxonomy import save_taxonomy_file

    save_taxonomy_file(taxonomy, out / "ontology.json")
    curation.write_clip_metadata(records, out / "metadata.csv", taxonomy)
    feature_spec = feature_spec_from(cfg)
    tone_spec = tone_spec_from(cfg)
    synth.write_synth_spec(
        out / "synth_spec.json",
        spec,
        feature_spec if cfg.data_kind == "features" else None,
        tone_spec if cfg.data_kind == "audio" else None,
        kind=cfg.data_kind,
    )
    if cfg.data_kind == "audio":
        from .dsp import write_wav

        audio_dir = out / "audio"
        audio_dir.mkdir(exist_ok=True)
        freqs = synth.class_frequencies(taxonomy, tone_spec, cfg.dsp.sample_rate)
        for r in records:
            wave = synth.tone_waveform(r, freqs, tone_spec, cfg.dsp)
            write_wav(audio_dir / f"{r.clip_id}.wav", wave)
        print(f"wrote {len(records)} tone clips under {audio_dir}")
    print(
        f"synth: {len(taxonomy)} classes, {len(records)} clips, "
        f"kind={cfg.data_kind} -> {out}"
    )
    return 0


def _prepare_run(cfg: RunConfig):
    taxonomy = _load_taxonomy(cfg)
    manifest_path = cfg.resolved_split_manifest
    if not manifest_path.is_file():
        raise DataError(
            f"split manifest not found: {manifest_path} (run 'curate' first)"
        )
    split, pools_records = curation.load_split_manifest(manifest_path)
    features = prepare_features(cfg, taxonomy, pools_records)
    fingerprints = {
        "ontology": _fingerprint_file(cfg.ontology),
        "split_manifest": _fingerprint_file(manifest_path),
        "config": cfg.fingerprint(),
    }
    return taxonomy, split, pools_records, features, fingerprints


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    taxonomy, split, pools_records, features, fingerprints = _prepare_run(cfg)
    base_pool = build_pool(split.base, pools_records["base"], features)
    steps = cfg.train_steps
    stride = max(1, steps // 20) if not args.verbose else 1

    def on_step(step: int, loss: float) -> None:
        if args.verbose or step % stride == 0 or step == steps - 1:
            print(f"step {step:>6d}  loss {loss:.6f}")

    print(
        f"train: method={cfg.method} beta={cfg.beta} steps={steps} "
        f"n_way={cfg.episode.n_way} k_shot={cfg.episode.k_shot}"
    )
    result = train(cfg, taxonomy, base_pool, on_step=on_step)
    outdir = Path(cfg.workdir)
    ckpt = save_trained(outdir, cfg, result, fingerprints)
    print(f"checkpoint -> {ckpt}")
    print(f"manifest -> {outdir / 'run_manifest.json'}")
    return 0


def _load_eval_network(cfg: RunConfig, checkpoint_path: Path):
    if not checkpoint_path.is_file():
        raise DataError(f"checkpoint not found: {checkpoint_path}")
    net, seed, step = load_checkpoint(checkpoint_path)
    if net.config.fingerprint() != cfg.network.fingerprint():
        raise DataError(
            "checkpoint/architecture mismatch: checkpoint "
            f"{net.config.fingerprint()} vs configured {cfg.network.fingerprint()}"
        )
    return net, seed, step


def _evaluate_splits(cfg: RunConfig, net, taxonomy, split, pools_records, features):
    reports: dict[str, MetricsReport] = {}
    accuracy: dict[str, float] = {}
    for name, classes in (
        ("validation", split.validation),
        ("evaluation", split.evaluation),
    ):
        pool = build_pool(classes, pools_records[name], features)
        result = evaluate_pool(
            net,
            pool,
            cfg.episode,
            taxonomy,
            n_episodes=cfg.eval_episodes,
            n_runs=cfg.eval_runs,
            seed=cfg.eval_seed,
            f1_threshold=cfg.f1_threshold,
        )
        reports[name] = result.report
        accuracy[name] = result.episode_accuracy
    return reports, accuracy


def _write_eval_outputs(outdir: Path, reports, accuracy) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "reports": {k: v.as_dict() for k, v in reports.items()},
                "episode_accuracy": accuracy,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(outdir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["split", "map", "map_hw", "auc", "auc_hw", "f1", "f1_hw"],
        )
        writer.writeheader()
        for row in report_rows(reports):
            writer.writerow(row)


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    taxonomy, split, pools_records, features, fingerprints = _prepare_run(cfg)
    checkpoint_path = Path(args.checkpoint or (Path(cfg.workdir) / "checkpoint.emb"))
    net, _, step = _load_eval_network(cfg, checkpoint_path)
    reports, accuracy = _evaluate_splits(
        cfg, net, taxonomy, split, pools_records, features
    )
    outdir = Path(cfg.workdir)
    _write_eval_outputs(outdir, reports, accuracy)
    print(f"eval: checkpoint step {step}, episodes {cfg.eval_episodes} x {cfg.eval_runs} runs")
    print(format_report_table(reports))
    for name, acc in accuracy.items():
        print(f"episode accuracy [{name}]: {100 * acc:.2f}%")
    print(f"metrics -> {outdir / 'metrics.json'}")
    return 0


def cmd_sweep_beta(args) -> int:
    cfg = _config_from_args(args)
    grid = [float(b) for b in (args.beta or DEFAULT_BETA_GRID)]
    taxonomy, split, pools_records, features, fingerprints = _prepare_run(cfg)
    base_pool = build_pool(split.base, pools_records["base"], features)
    rows = []
    for beta in grid:
        run_cfg = _config_from_args(args)
        run_cfg.beta = beta
        run_cfg.__post_init__()  # re-derive the episode target mode
        print(f"sweep: training beta={beta:g}")
        result = train(run_cfg, taxonomy, base_pool)
        net = result.net
        reports, accuracy = _evaluate_splits(
            run_cfg, net, taxonomy, split, pools_records, features
        )
        for split_name, report in reports.items():
            rows.append(
                {
                    "beta": f"{beta:g}",
                    "split": split_name,
                    "map": f"{100 * report.map.mean:.2f}",
                    "map_hw": f"{100 * report.map.half_width:.2f}",
                    "auc": f"{100 * report.auc.mean:.2f}",
                    "auc_hw": f"{100 * report.auc.half_width:.2f}",
                    "f1": f"{100 * report.f1.mean:.2f}",
                    "f1_hw": f"{100 * report.f1.half_width:.2f}",
                }
            )
    outdir = Path(cfg.workdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sweep_path = outdir / "beta_sweep.csv"
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["beta", "split", "map", "map_hw", "auc", "auc_hw", "f1", "f1_hw"],
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"{'beta':<6} {'split':<12} {'mAP (%)':>12} {'AUC (%)':>12} {'F1 (%)':>12}")
    for row in rows:
        print(
            f"{row['beta']:<6} {row['split']:<12} "
            f"{row['map']:>6}±{row['map_hw']:<5} "
            f"{row['auc']:>6}±{row['auc_hw']:<5} "
            f"{row['f1']:>6}±{row['f1_hw']:<5}"
        )
    print(f"sweep table -> {sweep_path}")
    return 0


def cmd_report(args) -> int:
    reports: dict[str, MetricsReport] = {}
    for path in args.metrics:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        label_prefix = Path(path).parent.name
        for split_name, rep in doc["reports"].items():
            key = f"{label_prefix}/{split_name}" if len(args.metrics) > 1 else split_name
            reports[key] = MetricsReport(
                map=_summary_from(rep["map"]),
                auc=_summary_from(rep["auc"]),
                f1=_summary_from(rep["f1"]),
            )
    print(format_report_table(reports))
    return 0


def _summary_from(d) -> MetricSummary:
    return MetricSummary(
        mean=float(d["mean"]),
        half_width=float(d["half_width"]),
        per_run=tuple(float(x) for x in d.get("per_run", ())),
    )


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ladproto",
        description=(
            "Label-dependent prototypical networks for multi-label few-shot "
            "sound classification"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )

    p = sub.add_parser("curate", help="build the label split and pool manifest")
    add_common(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    add_common(p)
    p.add_argument("--out", help="output directory (default: workdir)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an embedding network episodically")
    add_common(p)
    p.add_argument("--verbose", action="store_true", help="print every step")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the novel pools")
    add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: workdir/checkpoint.emb)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-beta", help="train/evaluate across a beta grid")
    add_common(p)
    p.add_argument(
        "--beta",
        action="append",
        type=float,
        help="beta value to include (repeatable; default 15 30 45)",
    )
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("report", help="render metrics files as a table")
    p.add_argument("metrics", nargs="+", help="metrics.json files from eval runs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except LadProtoError as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
