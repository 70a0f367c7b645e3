"""Synthetic datasets for offline testing: cluster features or tone audio.

Two modes share the generated taxonomy and metadata:

* ``features``: each class owns a deterministic cluster center in feature
  space; a clip's feature map is the mean of its label centers plus seeded
  Gaussian noise. Child centers sit near their parent's center, so the
  hierarchy is geometrically real. This skips the DSP stage entirely and is
  the fast path for CI and learning-signal checks.
* ``tones``: each class owns a sine frequency; a clip is the mix of its
  label tones plus a little noise, written as a standard WAV so the full
  log-mel front end gets exercised.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .curation import ClipRecord, SyntheticSpec
from .dsp import DspConfig, Waveform
from .errors import ConfigError
from .taxonomy import ClassId, Taxonomy


@dataclass(frozen=True)
class FeatureSynthSpec:
    """Geometry of the cluster-feature generator."""

    height: int = 8
    width: int = 8
    root_scale: float = 6.0  # spread of top-level cluster centers
    child_scale: float = 2.5  # offset of a child center from its parent
    noise: float = 0.6
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "root_scale": self.root_scale,
            "child_scale": self.child_scale,
            "noise": self.noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSynthSpec":
        return cls(**dict(d))


def _stable_stream(*parts) -> np.random.Generator:
    """A generator seeded from a stable hash of the given parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def class_centers(
    taxonomy: Taxonomy, spec: FeatureSynthSpec
) -> dict[ClassId, np.ndarray]:
    """Deterministic per-class cluster centers; children orbit their parent."""
    dim = spec.height * spec.width
    centers: dict[ClassId, np.ndarray] = {}
    order = sorted(taxonomy.single_path_ids(), key=lambda c: (taxonomy.depth(c), c))
    for c in order:
        rng = _stable_stream("center", spec.seed, c)
        parent = taxonomy.parent_of(c)
        if parent is None:
            centers[c] = spec.root_scale * rng.standard_normal(dim)
        else:
            centers[c] = centers[parent] + spec.child_scale * rng.standard_normal(dim)
    return centers


def cluster_features(
    taxonomy: Taxonomy,
    records: Iterable[ClipRecord],
    spec: FeatureSynthSpec,
) -> dict[str, np.ndarray]:
    """Per-clip feature maps [1, height, width], deterministic per spec."""
    centers = class_centers(taxonomy, spec)
    features: dict[str, np.ndarray] = {}
    for r in records:
        usable = sorted(c for c in r.labels if c in centers)
        if not usable:
            continue
        mean = np.mean([centers[c] for c in usable], axis=0)
        rng = _stable_stream("clip", spec.seed, r.clip_id)
        vec = mean + spec.noise * rng.standard_normal(mean.shape)
        features[r.clip_id] = vec.reshape(1, spec.height, spec.width)
    return features


@dataclass(frozen=True)
class ToneSynthSpec:
    """Tone-mixture audio generator; frequencies are keyed by class."""

    duration: float = 1.0
    base_freq: float = 220.0
    freq_step: float = 130.0
    noise: float = 0.01
    amplitude: float = 0.25
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "base_freq": self.base_freq,
            "freq_step": self.freq_step,
            "noise": self.noise,
            "amplitude": self.amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToneSynthSpec":
        return cls(**dict(d))


def class_frequencies(taxonomy: Taxonomy, spec: ToneSynthSpec, sample_rate: int) -> dict[ClassId, float]:
    ids = taxonomy.single_path_ids()
    nyquist = sample_rate / 2.0
    freqs = {}
    for i, c in enumerate(ids):
        f = spec.base_freq + spec.freq_step * i
        if f >= nyquist * 0.9:
            raise ConfigError(
                f"tone frequency {f:.0f} Hz for class {c!r} too close to Nyquist; "
                "lower freq_step or the class count"
            )
        freqs[c] = f
    return freqs


def tone_waveform(
    record: ClipRecord,
    freqs: Mapping[ClassId, float],
    spec: ToneSynthSpec,
    dsp_cfg: DspConfig,
) -> Waveform:
    n = int(round(spec.duration * dsp_cfg.sample_rate))
    t = np.arange(n) / dsp_cfg.sample_rate
    rng = _stable_stream("tone", spec.seed, record.clip_id)
    x = np.zeros(n)
    usable = sorted(c for c in record.labels if c in freqs)
    for c in usable:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += spec.amplitude * np.sin(2.0 * np.pi * freqs[c] * t + phase)
    x += spec.noise * rng.standard_normal(n)
    return Waveform(samples=x, sample_rate=dsp_cfg.sample_rate)


def write_synth_spec(path, synthetic: SyntheticSpec, features: FeatureSynthSpec | None,
                     tones: ToneSynthSpec | None, kind: str) -> None:
    """Record the generator parameters next to the dataset so any later run
    can regenerate features bit-identically."""
    doc = {
        "kind": kind,
        "synthetic": {
            "n_roots": synthetic.n_roots,
            "depth": synthetic.depth,
            "branching": synthetic.branching,
            "n_clips": synthetic.n_clips,
            "labels_per_clip": synthetic.labels_per_clip,
            "seed": synthetic.seed,
            "parent_pair_prob": synthetic.parent_pair_prob,
        },
        "features": features.to_dict() if features else None,
        "tones": tones.to_dict() if tones else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_synth_spec(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
