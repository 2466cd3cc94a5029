"""Overlap metrics and the budget-matched comparison protocol.

For each adversarial example and each explanation size n in 1..20, the
pixel budget is the size of LIME's n-superpixel partial union; the
gradient explainers contribute their budget-many highest-influence
pixels, and a uniformly random mask of the same budget serves as the
baseline. Jaccard and Hamming likeness are computed against the attack
mask, and the three explainers (random excluded) are ranked 1 (best) to
3 (worst) per metric, ties sharing the mean of the tied positions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .attack import AdversarialRecord, AttackStatus
from .errors import InputError
from .explainers import SuperpixelRanking, partial_union, pixel_budget_mask

METHODS = ("lime", "guided", "salience")
ALL_METHODS = METHODS + ("random",)


def jaccard(p: np.ndarray, c: np.ndarray) -> float:
    if p.shape != c.shape:
        raise InputError(f"mask shapes differ: {p.shape} vs {c.shape}")
    if not c.any():
        raise InputError("ground-truth mask is empty")
    inter = np.count_nonzero(p & c)
    union = np.count_nonzero(p | c)
    return inter / union


def hamming_likeness(p: np.ndarray, c: np.ndarray) -> float:
    if p.shape != c.shape:
        raise InputError(f"mask shapes differ: {p.shape} vs {c.shape}")
    return 1.0 - np.count_nonzero(p ^ c) / p.size


def average_ranks(values):
    """Descending fractional ranks: best value gets 1, ties share the mean
    of their positions."""
    order = sorted(range(len(values)), key=lambda i: -values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_pos = (i + 1 + j + 1) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = mean_pos
        i = j + 1
    return ranks


def random_mask(shape, budget: int, rng) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    flat[rng.choice(flat.size, size=budget, replace=False)] = True
    return flat.reshape(shape)


@dataclass
class ExplanationSet:
    salience: np.ndarray
    guided: np.ndarray
    lime: SuperpixelRanking


@dataclass
class EvalRecord:
    example_id: str
    n: int
    budget: int
    jaccard: dict  # method -> value, methods + random
    hamming: dict
    rank_jaccard: dict  # explainers only
    rank_hamming: dict


def evaluate_example(
    record: AdversarialRecord, explanations: ExplanationSet, seed: int, max_n: int = 20
):
    """EvalRecords for n = 1..max_n on one Success record.

    The random baseline is drawn once per (example, n) from a seed derived
    from (seed, image_index, region_rank, n).
    """
    if record.status is not AttackStatus.SUCCESS:
        raise InputError("only Success records are evaluated")
    if not explanations.lime.ranked:
        raise InputError("LIME produced no ranked superpixel for this record")
    truth = record.mask
    out = []
    for n in range(1, max_n + 1):
        p_lime = partial_union(explanations.lime, n)
        budget = int(p_lime.sum())
        masks = {
            "lime": p_lime,
            "guided": pixel_budget_mask(explanations.guided, budget),
            "salience": pixel_budget_mask(explanations.salience, budget),
        }
        rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(
                    [seed, record.image_index, record.region_rank, n]
                )
            )
        )
        masks["random"] = random_mask(truth.shape, budget, rng)
        jac = {m: jaccard(masks[m], truth) for m in ALL_METHODS}
        ham = {m: hamming_likeness(masks[m], truth) for m in ALL_METHODS}
        rj = average_ranks([jac[m] for m in METHODS])
        rh = average_ranks([ham[m] for m in METHODS])
        out.append(
            EvalRecord(
                example_id=record.record_id,
                n=n,
                budget=budget,
                jaccard=jac,
                hamming=ham,
                rank_jaccard=dict(zip(METHODS, rj)),
                rank_hamming=dict(zip(METHODS, rh)),
            )
        )
    return out


@dataclass
class SummaryTable:
    mean_rank_jaccard: dict
    mean_rank_hamming: dict
    num_records: int
    num_examples: int
    mean_best_jaccard: dict  # methods + random, best over n per example
    best_jaccard_margin: dict  # method -> (mean paired diff vs random, se)
    config_fingerprint: str = ""
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "mean_rank_jaccard": self.mean_rank_jaccard,
            "mean_rank_hamming": self.mean_rank_hamming,
            "num_records": self.num_records,
            "num_examples": self.num_examples,
            "mean_best_jaccard": self.mean_best_jaccard,
            "best_jaccard_margin": self.best_jaccard_margin,
            "config_fingerprint": self.config_fingerprint,
            "notes": self.notes,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def format_text(self) -> str:
        lines = [
            f"mean ranks over {self.num_records} explanations "
            f"({self.num_examples} examples x n), 1.0 best, 3.0 worst",
            f"{'explainer':12s} {'Jaccard':>8s} {'Hamming':>8s} {'best-n J':>9s}",
        ]
        for m in METHODS:
            lines.append(
                f"{m:12s} {self.mean_rank_jaccard[m]:8.2f} "
                f"{self.mean_rank_hamming[m]:8.2f} {self.mean_best_jaccard[m]:9.3f}"
            )
        lines.append(
            f"{'random':12s} {'-':>8s} {'-':>8s} {self.mean_best_jaccard['random']:9.3f}"
        )
        lines.extend(self.notes)
        return "\n".join(lines)


def aggregate(records, config_fingerprint="") -> SummaryTable:
    if not records:
        raise InputError("no evaluation records to aggregate")
    mean_rj = {m: float(np.mean([r.rank_jaccard[m] for r in records])) for m in METHODS}
    mean_rh = {m: float(np.mean([r.rank_hamming[m] for r in records])) for m in METHODS}

    by_example: dict[str, list] = {}
    for r in records:
        by_example.setdefault(r.example_id, []).append(r)
    best = {m: [] for m in ALL_METHODS}
    for recs in by_example.values():
        for m in ALL_METHODS:
            best[m].append(max(r.jaccard[m] for r in recs))
    mean_best = {m: float(np.mean(best[m])) for m in ALL_METHODS}
    margin = {}
    for m in METHODS:
        diffs = np.asarray(best[m]) - np.asarray(best["random"])
        se = float(diffs.std(ddof=1) / np.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
        margin[m] = [float(diffs.mean()), se]

    order = sorted(METHODS, key=lambda m: mean_rj[m])
    notes = [
        "rank ordering under Jaccard (best first): " + " < ".join(order),
    ]
    return SummaryTable(
        mean_rank_jaccard=mean_rj,
        mean_rank_hamming=mean_rh,
        num_records=len(records),
        num_examples=len(by_example),
        mean_best_jaccard=mean_best,
        best_jaccard_margin=margin,
        config_fingerprint=config_fingerprint,
        notes=notes,
    )


def write_eval_csv(records, path) -> None:
    """One row per example x n x method; the random baseline carries no
    ranks."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["example_id", "n", "budget", "method", "jaccard", "hamming",
             "rank_jaccard", "rank_hamming"]
        )
        for r in records:
            for m in ALL_METHODS:
                writer.writerow(
                    [
                        r.example_id,
                        r.n,
                        r.budget,
                        m,
                        repr(r.jaccard[m]),
                        repr(r.hamming[m]),
                        repr(r.rank_jaccard[m]) if m in r.rank_jaccard else "",
                        repr(r.rank_hamming[m]) if m in r.rank_hamming else "",
                    ]
                )


def read_eval_csv(path):
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(
                {
                    "example_id": row["example_id"],
                    "n": int(row["n"]),
                    "budget": int(row["budget"]),
                    "method": row["method"],
                    "jaccard": float(row["jaccard"]),
                    "hamming": float(row["hamming"]),
                    "rank_jaccard": float(row["rank_jaccard"]) if row["rank_jaccard"] else None,
                    "rank_hamming": float(row["rank_hamming"]) if row["rank_hamming"] else None,
                }
            )
    return rows


def records_from_rows(rows):
    """Rebuild EvalRecords from CSV rows (inverse of write_eval_csv)."""
    grouped: dict[tuple, dict] = {}
    for row in rows:
        key = (row["example_id"], row["n"])
        entry = grouped.setdefault(
            key,
            {"budget": row["budget"], "jaccard": {}, "hamming": {},
             "rank_jaccard": {}, "rank_hamming": {}},
        )
        m = row["method"]
        entry["jaccard"][m] = row["jaccard"]
        entry["hamming"][m] = row["hamming"]
        if row["rank_jaccard"] is not None:
            entry["rank_jaccard"][m] = row["rank_jaccard"]
            entry["rank_hamming"][m] = row["rank_hamming"]
    return [
        EvalRecord(example_id=eid, n=n, budget=e["budget"], jaccard=e["jaccard"],
                   hamming=e["hamming"], rank_jaccard=e["rank_jaccard"],
                   rank_hamming=e["rank_hamming"])
        for (eid, n), e in grouped.items()
    ]
