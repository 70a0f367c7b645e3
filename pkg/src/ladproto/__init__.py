"""Label-dependent prototypical networks for multi-label few-shot sound
classification over a hierarchical taxonomy."""

from .taxonomy import ClassId, Taxonomy, load_taxonomy, load_taxonomy_file
from .curation import (
    ClipRecord,
    CuratedDataset,
    LabelSplit,
    SyntheticSpec,
    curate,
    generate_synthetic,
)
from .dsp import DspConfig, LogMelSpectrogram, Waveform, logmel, stft
from .episodic import (
    EmbeddedLabel,
    EpisodeConfig,
    ExamplePool,
    PrototypeSet,
    Task,
    align_parent_child,
    class_probabilities,
    compute_prototypes,
    embed_labels,
    episode_loss,
    form_tasks,
    run_baseline_episode,
    run_episode,
    task_loss,
)
from .metrics import MetricsReport, aggregate, average_precision, f1, roc_auc
from .network import EmbeddingNetwork, NetworkConfig, Optimizer, init_parameters

__version__ = "0.1.0"
