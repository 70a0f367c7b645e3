"""Feature preparation for runs: synthetic cluster features, or cached
log-mel extraction with z-score normalization fit on the base pool.

Audio-mode features are cached per clip, keyed by the pair of content
fingerprint and DSP-config fingerprint; a stale or mismatching cache entry
is recomputed transparently.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .curation import ClipRecord
from .config import RunConfig, feature_spec_from
from .dsp import (
    DspConfig,
    LogMelSpectrogram,
    ZScoreStats,
    fit_frames,
    load_features,
    logmel,
    read_wav,
    save_features,
    zscore_apply,
    zscore_fit,
)
from .errors import DataError
from .synth import FeatureSynthSpec, cluster_features, load_synth_spec
from .taxonomy import Taxonomy


def _file_fingerprint(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def audio_path(audio_dir: Path, clip_id: str) -> Path:
    name = clip_id if clip_id.endswith(".wav") else f"{clip_id}.wav"
    return audio_dir / name


def cached_logmel(
    clip_path: Path, cfg: DspConfig, cache_dir: Path | None
) -> LogMelSpectrogram:
    """Log-mel features for one clip, via the on-disk cache when enabled."""
    key = f"{cfg.fingerprint()}:{_file_fingerprint(clip_path)}"
    cache_file = None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache_file = cache_dir / f"{clip_path.stem}.lmf"
        if cache_file.is_file():
            try:
                spec = load_features(cache_file)
                if spec.fingerprint == key:
                    return spec
            except DataError:
                pass  # recompute below
    wave = read_wav(clip_path, expected_rate=cfg.sample_rate)
    spec = logmel(wave, cfg)
    spec = LogMelSpectrogram(values=spec.values, fingerprint=key)
    if cache_file is not None:
        save_features(cache_file, spec)
        spec = load_features(cache_file)  # train on exactly the cached bits
    return spec


def audio_features(
    cfg: RunConfig,
    pools_records: Mapping[str, tuple[ClipRecord, ...]],
    audio_dir: Path,
) -> dict[str, np.ndarray]:
    """Extract, normalize, and geometry-fix features for every pooled clip.

    Z-score statistics come from the base pool only and are applied
    everywhere.
    """
    cache_dir = Path(cfg.feature_cache) if cfg.feature_cache else None
    raw: dict[str, LogMelSpectrogram] = {}
    for pool_records in pools_records.values():
        for r in pool_records:
            if r.clip_id not in raw:
                raw[r.clip_id] = cached_logmel(
                    audio_path(audio_dir, r.clip_id), cfg.dsp, cache_dir
                )
    base_ids = sorted(r.clip_id for r in pools_records["base"])
    if not base_ids:
        raise DataError("base pool is empty; cannot fit z-score statistics")
    stats = zscore_fit([raw[i] for i in base_ids])
    out: dict[str, np.ndarray] = {}
    for cid, spec in raw.items():
        values = zscore_apply(spec, stats).values
        out[cid] = fit_frames(values, cfg.frames)[None, :, :]
    return out


def synthetic_features(
    cfg: RunConfig,
    taxonomy: Taxonomy,
    records: Iterable[ClipRecord],
) -> dict[str, np.ndarray]:
    """Cluster features regenerated from the dataset's generator sidecar."""
    spec = None
    if cfg.synth_spec:
        doc = load_synth_spec(cfg.synth_spec)
        if doc.get("features"):
            spec = FeatureSynthSpec.from_dict(doc["features"])
    if spec is None:
        spec = feature_spec_from(cfg)
    return cluster_features(taxonomy, records, spec)


def prepare_features(
    cfg: RunConfig,
    taxonomy: Taxonomy,
    pools_records: Mapping[str, tuple[ClipRecord, ...]],
) -> dict[str, np.ndarray]:
    if cfg.data_kind == "features":
        all_records = [r for pool in pools_records.values() for r in pool]
        return synthetic_features(cfg, taxonomy, all_records)
    audio_dir = Path(cfg.metadata).parent / "audio" if cfg.metadata else Path("audio")
    return audio_features(cfg, pools_records, audio_dir)
