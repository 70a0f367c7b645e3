"""Novel-pool evaluation protocol.

Each evaluation run samples a fixed number of query episodes from the
pool: a query spawns one task per in-pool label (no alignment, no
smoothing; those are training devices), and every roster class receives
the task's softmax score together with a binary truth bit saying whether
the class really is on the query. Per-class score/truth pools feed the
macro metrics; several independent runs with shifted seeds give the
confidence intervals. Episode accuracy is the fraction of tasks whose
argmax lands on the active class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .episodic import EpisodeConfig, ExamplePool, run_episode
from .errors import InfeasibleTaskError
from .metrics import MetricsReport, aggregate, macro_metrics
from .taxonomy import Taxonomy


@dataclass(frozen=True)
class EvalResult:
    report: MetricsReport
    episode_accuracy: float
    n_tasks: int


def evaluate_pool(
    net,
    pool: ExamplePool,
    episode_cfg: EpisodeConfig,
    taxonomy: Taxonomy,
    n_episodes: int,
    n_runs: int,
    seed: int,
    f1_threshold: float = 0.5,
) -> EvalResult:
    """Run the fixed-episode evaluation protocol against a frozen network."""
    eval_cfg = EpisodeConfig(
        n_way=episode_cfg.n_way,
        k_shot=episode_cfg.k_shot,
        distance=episode_cfg.distance,
        beta=None,
    )
    feasible = pool.restrict_to_feasible(eval_cfg.k_shot)
    if len(feasible.classes) < eval_cfg.n_way:
        raise InfeasibleTaskError(
            f"evaluation pool has {len(feasible.classes)} feasible classes; "
            f"episodes need {eval_cfg.n_way}"
        )
    queries = feasible.query_candidates()
    if not queries:
        raise InfeasibleTaskError("evaluation pool has no usable queries")

    per_run: list[dict[str, float]] = []
    last_per_class: dict = {}
    skipped: tuple[str, ...] = ()
    correct = 0
    total = 0
    for run in range(n_runs):
        rng = np.random.default_rng(seed + run)
        pairs: dict[str, tuple[list[float], list[int]]] = {
            c: ([], []) for c in feasible.classes
        }
        for _ in range(n_episodes):
            query_id = queries[rng.integers(len(queries))]
            result = run_episode(
                query_id,
                feasible,
                net,
                eval_cfg,
                taxonomy,
                rng,
                align=False,
                couple=False,
            )
            truth_labels = feasible.visible_labels(query_id)
            for tr in result.tasks:
                roster = tr.task.roster
                probs = tr.probabilities
                if roster[int(np.argmax(probs))] == tr.task.active_class:
                    correct += 1
                total += 1
                for j, c in enumerate(roster):
                    scores, truth = pairs[c]
                    scores.append(float(probs[j]))
                    truth.append(1 if c in truth_labels else 0)
        populated = {c: st for c, st in pairs.items() if st[0]}
        macro, per_class, run_skipped = macro_metrics(populated, f1_threshold)
        per_run.append(macro)
        last_per_class = per_class
        skipped = tuple(run_skipped)

    report = aggregate(
        per_run,
        per_class=last_per_class,
        skipped_classes=skipped,
        metadata={
            "n_episodes": n_episodes,
            "n_runs": n_runs,
            "seed": seed,
            "n_way": eval_cfg.n_way,
            "k_shot": eval_cfg.k_shot,
        },
    )
    return EvalResult(
        report=report,
        episode_accuracy=(correct / total) if total else 0.0,
        n_tasks=total,
    )


def report_rows(reports: Mapping[str, MetricsReport]) -> list[dict]:
    """Flatten split -> report into printable/CSV-able rows."""
    rows = []
    for split, rep in sorted(reports.items()):
        rows.append(
            {
                "split": split,
                "map": f"{100 * rep.map.mean:.2f}",
                "map_hw": f"{100 * rep.map.half_width:.2f}",
                "auc": f"{100 * rep.auc.mean:.2f}",
                "auc_hw": f"{100 * rep.auc.half_width:.2f}",
                "f1": f"{100 * rep.f1.mean:.2f}",
                "f1_hw": f"{100 * rep.f1.half_width:.2f}",
            }
        )
    return rows


def format_report_table(reports: Mapping[str, MetricsReport]) -> str:
    lines = [f"{'split':<12} {'mAP (%)':>14} {'AUC (%)':>14} {'F1 (%)':>14}"]
    for row in report_rows(reports):
        lines.append(
            f"{row['split']:<12} "
            f"{row['map']:>8}±{row['map_hw']:<5} "
            f"{row['auc']:>8}±{row['auc_hw']:<5} "
            f"{row['f1']:>8}±{row['f1_hw']:<5}"
        )
    return "\n".join(lines)
