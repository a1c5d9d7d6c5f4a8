"""Aggregate attack results into the evaluation metrics and render reports.

Conventions (also stamped into every report header): accuracies are on the
0-100 percent scale; avg_queries averages over ALL attacked examples,
successes and failures alike; the perturbation cost denominator averages
perturbed words over successful attacks only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .attack import AttackResult

AVG_QUERIES_CONVENTION = (
    "avg_queries averages over all attacked examples (successes and failures); "
    "avg_perturbed_words averages over successes only"
)


@dataclass
class MetricsReport:
    clean_acc: float
    adv_acc: float
    attack_rate: float
    avg_queries: float
    qe: float | None
    pqc: float | None
    avg_perturbed_words: float | None
    max_perturbed_words: int | None
    n_examples: int
    n_attacked: int
    n_successes: int
    provenance: dict = field(default_factory=dict)


def after_attack_accuracy(
    results: list[AttackResult],
    clean_correct: list[bool],
) -> tuple[float, float]:
    """(clean_acc, adv_acc) in percent over the evaluation set.

    clean_correct has one flag per evaluation example; results has one entry
    per correctly-classified (attacked) example. Failed attacks stay correct;
    originally-misclassified examples count as incorrect in both figures.
    """
    if not clean_correct:
        raise ValueError("empty evaluation set")
    n_eval = len(clean_correct)
    n_correct = sum(clean_correct)
    if len(results) != n_correct:
        raise ValueError(
            f"{len(results)} attack results but {n_correct} correctly-classified examples"
        )
    n_successes = sum(r.success for r in results)
    clean_acc = 100.0 * n_correct / n_eval
    adv_acc = 100.0 * (n_correct - n_successes) / n_eval
    return clean_acc, adv_acc


def query_efficiency(clean_acc: float, adv_acc: float, avg_queries: float) -> float:
    """Attack-rate percentage points gained per target query."""
    if avg_queries <= 0:
        raise ValueError("avg_queries must be positive")
    return (clean_acc - adv_acc) / avg_queries


def perturbation_query_cost(avg_queries: float, avg_perturbed_words: float) -> float:
    """Average queries spent per perturbed word of a successful attack."""
    if avg_perturbed_words <= 0:
        raise ValueError("avg_perturbed_words must be positive")
    return avg_queries / avg_perturbed_words


def aggregate(
    results: list[AttackResult],
    clean_correct: list[bool],
    provenance: dict | None = None,
) -> MetricsReport:
    clean_acc, adv_acc = after_attack_accuracy(results, clean_correct)
    if not results:
        raise ValueError("no examples were attacked")
    avg_queries = sum(r.queries_used for r in results) / len(results)
    successes = [r for r in results if r.success]
    if successes:
        avg_pw = sum(r.perturbed_word_count for r in successes) / len(successes)
        max_pw = max(r.perturbed_word_count for r in successes)
        pqc = perturbation_query_cost(avg_queries, avg_pw) if avg_pw > 0 else None
    else:
        avg_pw = None
        max_pw = None
        pqc = None
    qe = query_efficiency(clean_acc, adv_acc, avg_queries) if avg_queries > 0 else None
    return MetricsReport(
        clean_acc=clean_acc,
        adv_acc=adv_acc,
        attack_rate=clean_acc - adv_acc,
        avg_queries=avg_queries,
        qe=qe,
        pqc=pqc,
        avg_perturbed_words=avg_pw,
        max_perturbed_words=max_pw,
        n_examples=len(clean_correct),
        n_attacked=len(results),
        n_successes=sum(r.success for r in results),
        provenance=provenance or {},
    )


_COLUMNS = [
    ("ranker", lambda r: r.provenance.get("ranker", "")),
    ("substitute_data", lambda r: r.provenance.get("substitute_data", "")),
    ("epsilon", lambda r: r.provenance.get("epsilon", "")),
    ("k", lambda r: r.provenance.get("k", "")),
    ("seed", lambda r: r.provenance.get("seed", "")),
    ("config_hash", lambda r: r.provenance.get("config_hash", "")),
    ("n_examples", lambda r: r.n_examples),
    ("n_attacked", lambda r: r.n_attacked),
    ("n_successes", lambda r: r.n_successes),
    ("clean_acc", lambda r: f"{r.clean_acc:.2f}"),
    ("adv_acc", lambda r: f"{r.adv_acc:.2f}"),
    ("attack_rate", lambda r: f"{r.attack_rate:.2f}"),
    ("avg_queries", lambda r: f"{r.avg_queries:.1f}"),
    ("query_efficiency", lambda r: "" if r.qe is None else f"{r.qe:.3f}"),
    ("perturbation_query_cost", lambda r: "" if r.pqc is None else f"{r.pqc:.1f}"),
    (
        "avg_perturbed_words",
        lambda r: "" if r.avg_perturbed_words is None else f"{r.avg_perturbed_words:.2f}",
    ),
    (
        "max_perturbed_words",
        lambda r: "" if r.max_perturbed_words is None else str(r.max_perturbed_words),
    ),
]


def render_report(reports: list[MetricsReport], fmt: str = "csv") -> str:
    """Deterministic CSV or Markdown table, one row per report."""
    names = [name for name, _ in _COLUMNS]
    rows = [[str(getter(r)) for _, getter in _COLUMNS] for r in reports]
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# {AVG_QUERIES_CONVENTION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(names) + " |",
            "| " + " | ".join("---" for _ in names) + " |",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        lines.append("")
        lines.append(f"_{AVG_QUERIES_CONVENTION}_")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
