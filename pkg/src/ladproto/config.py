"""Run configuration: a flat key-value text format with includes.

A config file is a sequence of lines: blank lines and ``#`` comments are
skipped, ``include <relative-path>`` splices another file in place, and
everything else is ``key = value``. Later assignments win, so an including
file overrides whatever it included. Values parse as JSON when they can
(numbers, booleans, null) and as comma-separated lists when they contain a
comma; otherwise they stay strings. Every experiment condition is meant to
be expressible as one diffable file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .curation import SyntheticSpec
from .dsp import DspConfig
from .episodic import EpisodeConfig
from .errors import ConfigError
from .network import NetworkConfig, Optimizer
from .synth import FeatureSynthSpec, ToneSynthSpec

METHODS = ("baseline-protonet", "one-vs-rest", "lad-protonet")


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def read_config_file(path) -> dict:
    """Flatten a config file (with includes) into a key -> value mapping."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict = {}
    _read_into(path, out, seen=set())
    return out


def _read_into(path: Path, out: dict, seen: set) -> None:
    resolved = path.resolve()
    if resolved in seen:
        raise ConfigError(f"config include cycle at {path}")
    seen.add(resolved)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("include "):
            target = path.parent / line[len("include ") :].strip()
            if not target.is_file():
                raise ConfigError(f"{path}:{lineno}: include not found: {target}")
            _read_into(target, out, seen)
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = parse_value(value)
    seen.discard(resolved)


def apply_overrides(mapping: dict, overrides: Mapping[str, str]) -> dict:
    merged = dict(mapping)
    for key, value in overrides.items():
        merged[key.strip()] = parse_value(value) if isinstance(value, str) else value
    return merged


def _as_int_list(v) -> list[int]:
    if isinstance(v, (int, float)):
        return [int(v)]
    return [int(x) for x in v]


@dataclass
class RunConfig:
    """Everything one reproducible run needs, resolved and validated."""

    # paths
    ontology: str = ""
    metadata: str = ""
    workdir: str = "runs"
    feature_cache: str = ""
    split_manifest: str = ""  # defaults to <workdir>/split_manifest.json
    synth_spec: str = ""  # generator sidecar for synthetic datasets

    # method
    method: str = "lad-protonet"
    beta: float | None = None

    # curation
    keep_depths: tuple[int, ...] = (1, 2)
    ratio: tuple[float, float, float] = (7.0, 2.0, 1.0)
    min_per_class: int | None = None  # defaults to k_shot + 1

    # sub-configs
    dsp: DspConfig = field(default_factory=DspConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer_kind: str = "adam"
    learning_rate: float = 1e-3

    # budgets
    train_steps: int = 1000
    eval_episodes: int = 200
    eval_runs: int = 3
    f1_threshold: float = 0.5
    frames: int = 99  # fixed frame count fed to the network (audio mode)
    data_kind: str = "features"  # "features" (cluster) or "audio" (tones/wavs)
    transcript: bool = False

    # seeds
    split_seed: int = 1
    init_seed: int = 2
    episode_seed: int = 3
    eval_seed: int = 4

    # synthetic-generator keys carried through for cmd_synth
    synth_kwargs: dict = field(default_factory=dict)
    feature_kwargs: dict = field(default_factory=dict)
    tone_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive when set")
        if self.data_kind not in ("features", "audio"):
            raise ConfigError("data_kind must be 'features' or 'audio'")
        if self.train_steps < 0 or self.eval_episodes < 1 or self.eval_runs < 1:
            raise ConfigError("train_steps/eval_episodes/eval_runs out of range")
        # the episode target mode must match the run-level smoothing choice
        if self.episode.beta != self.beta:
            self.episode = EpisodeConfig(
                n_way=self.episode.n_way,
                k_shot=self.episode.k_shot,
                distance=self.episode.distance,
                beta=self.beta,
            )

    @property
    def resolved_min_per_class(self) -> int:
        return self.min_per_class if self.min_per_class else self.episode.k_shot + 1

    @property
    def resolved_split_manifest(self) -> Path:
        if self.split_manifest:
            return Path(self.split_manifest)
        return Path(self.workdir) / "split_manifest.json"

    def to_dict(self) -> dict:
        return {
            "ontology": self.ontology,
            "metadata": self.metadata,
            "workdir": self.workdir,
            "feature_cache": self.feature_cache,
            "split_manifest": str(self.resolved_split_manifest),
            "synth_spec": self.synth_spec,
            "method": self.method,
            "beta": self.beta,
            "keep_depths": list(self.keep_depths),
            "ratio": list(self.ratio),
            "min_per_class": self.resolved_min_per_class,
            "dsp": {
                "sample_rate": self.dsp.sample_rate,
                "window": self.dsp.window,
                "hop": self.dsp.hop,
                "fft_size": self.dsp.fft_size,
                "n_mels": self.dsp.n_mels,
                "log_floor": self.dsp.log_floor,
            },
            "episode": {
                "n_way": self.episode.n_way,
                "k_shot": self.episode.k_shot,
                "distance": self.episode.distance,
                "beta": self.episode.beta,
            },
            "network": self.network.to_dict(),
            "optimizer_kind": self.optimizer_kind,
            "learning_rate": self.learning_rate,
            "train_steps": self.train_steps,
            "eval_episodes": self.eval_episodes,
            "eval_runs": self.eval_runs,
            "f1_threshold": self.f1_threshold,
            "frames": self.frames,
            "data_kind": self.data_kind,
            "transcript": self.transcript,
            "seeds": {
                "split": self.split_seed,
                "init": self.init_seed,
                "episode": self.episode_seed,
                "eval": self.eval_seed,
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def make_optimizer(self) -> Optimizer:
        return Optimizer(kind=self.optimizer_kind, lr=self.learning_rate)


_KEY_ALIASES = {
    "paths.ontology": "ontology",
    "paths.metadata": "metadata",
    "paths.workdir": "workdir",
    "paths.features": "feature_cache",
    "paths.manifest": "split_manifest",
    "paths.synth_spec": "synth_spec",
    "smoothing.beta": "beta",
    "curation.keep_depths": "keep_depths",
    "curation.ratio": "ratio",
    "curation.min_per_class": "min_per_class",
    "optimizer.kind": "optimizer_kind",
    "optimizer.lr": "learning_rate",
    "train.steps": "train_steps",
    "train.transcript": "transcript",
    "eval.episodes": "eval_episodes",
    "eval.runs": "eval_runs",
    "eval.f1_threshold": "f1_threshold",
    "dsp.frames": "frames",
    "data.kind": "data_kind",
    "seeds.split": "split_seed",
    "seeds.init": "init_seed",
    "seeds.episode": "episode_seed",
    "seeds.eval": "eval_seed",
}

_SYNTH_KEYS = {
    "synthetic.n_roots": "n_roots",
    "synthetic.depth": "depth",
    "synthetic.branching": "branching",
    "synthetic.n_clips": "n_clips",
    "synthetic.labels_per_clip": "labels_per_clip",
    "synthetic.seed": "seed",
    "synthetic.parent_pair_prob": "parent_pair_prob",
}

_FEATURE_KEYS = {
    "features.height": "height",
    "features.width": "width",
    "features.root_scale": "root_scale",
    "features.child_scale": "child_scale",
    "features.noise": "noise",
    "features.seed": "seed",
}

_TONE_KEYS = {
    "tones.duration": "duration",
    "tones.base_freq": "base_freq",
    "tones.freq_step": "freq_step",
    "tones.noise": "noise",
    "tones.amplitude": "amplitude",
    "tones.seed": "seed",
}


def build_run_config(mapping: Mapping) -> RunConfig:
    """Turn a flat key mapping into a validated RunConfig."""
    m = dict(mapping)
    kwargs: dict = {}
    for flat, attr in _KEY_ALIASES.items():
        if flat in m:
            kwargs[attr] = m.pop(flat)
    if "method" in m:
        kwargs["method"] = m.pop("method")

    dsp_kwargs = {}
    for key in ("sample_rate", "window", "hop", "fft_size", "n_mels", "log_floor"):
        flat = f"dsp.{key}"
        if flat in m:
            dsp_kwargs[key] = m.pop(flat)
    if dsp_kwargs:
        for k in ("sample_rate", "window", "hop", "fft_size", "n_mels"):
            if k in dsp_kwargs:
                dsp_kwargs[k] = int(dsp_kwargs[k])
        kwargs["dsp"] = DspConfig(**{**DspConfig().__dict__, **dsp_kwargs})

    ep_kwargs = {}
    for key in ("n_way", "k_shot", "distance"):
        flat = f"episode.{key}"
        if flat in m:
            ep_kwargs[key] = m.pop(flat)
    if ep_kwargs:
        for k in ("n_way", "k_shot"):
            if k in ep_kwargs:
                ep_kwargs[k] = int(ep_kwargs[k])
        kwargs["episode"] = EpisodeConfig(**ep_kwargs)

    net_kwargs = {}
    for key in ("in_channels", "blocks", "convs_per_block", "kernel", "dtype",
                "channel_norm"):
        flat = f"network.{key}"
        if flat in m:
            net_kwargs[key] = m.pop(flat)
    if "network.channels" in m:
        net_kwargs["channels"] = tuple(_as_int_list(m.pop("network.channels")))
    if net_kwargs:
        for k in ("in_channels", "blocks", "convs_per_block", "kernel"):
            if k in net_kwargs:
                net_kwargs[k] = int(net_kwargs[k])
        defaults = NetworkConfig().to_dict()
        defaults["channels"] = tuple(defaults["channels"])
        defaults.update(net_kwargs)
        kwargs["network"] = NetworkConfig.from_dict(defaults)

    synth_kwargs = {attr: m.pop(flat) for flat, attr in _SYNTH_KEYS.items() if flat in m}
    feature_kwargs = {attr: m.pop(flat) for flat, attr in _FEATURE_KEYS.items() if flat in m}
    tone_kwargs = {attr: m.pop(flat) for flat, attr in _TONE_KEYS.items() if flat in m}

    unknown = sorted(m)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    int_fields = {"min_per_class", "train_steps", "eval_episodes", "eval_runs",
                  "frames", "split_seed", "init_seed", "episode_seed", "eval_seed"}
    for k in list(kwargs):
        if k in int_fields and kwargs[k] is not None:
            kwargs[k] = int(kwargs[k])
    if "keep_depths" in kwargs:
        kwargs["keep_depths"] = tuple(_as_int_list(kwargs["keep_depths"]))
    if "ratio" in kwargs:
        ratio = kwargs["ratio"]
        if not isinstance(ratio, list) or len(ratio) != 3:
            raise ConfigError(f"ratio must be three comma-separated numbers, got {ratio!r}")
        kwargs["ratio"] = tuple(float(r) for r in ratio)
    if "beta" in kwargs and kwargs["beta"] is not None:
        kwargs["beta"] = float(kwargs["beta"])

    kwargs["synth_kwargs"] = {
        k: (float(v) if k == "parent_pair_prob" else int(v))
        for k, v in synth_kwargs.items()
    }
    kwargs["feature_kwargs"] = feature_kwargs
    kwargs["tone_kwargs"] = tone_kwargs
    try:
        return RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config: {e}") from None


def load_run_config(path, overrides: Mapping[str, str] | None = None) -> RunConfig:
    mapping = read_config_file(path)
    if overrides:
        mapping = apply_overrides(mapping, overrides)
    return build_run_config(mapping)


def synthetic_spec_from(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(**getattr(cfg, "synth_kwargs", {}))


def feature_spec_from(cfg: RunConfig) -> FeatureSynthSpec:
    return FeatureSynthSpec(**getattr(cfg, "feature_kwargs", {}))


def tone_spec_from(cfg: RunConfig) -> ToneSynthSpec:
    return ToneSynthSpec(**getattr(cfg, "tone_kwargs", {}))
