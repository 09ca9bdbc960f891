"""Objective music metrics on piano rolls.

Quality: pitch-class histogram entropy, grooving pattern similarity,
structureness, scale consistency. Correspondence and spread: a fixed 32-dim
music descriptor, split-half diversity and top-K retrieval precision.

Metrics that are undefined for a roll (too few non-empty bars, no notes)
return ``None``; corpus means skip those.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .pianoroll import ONSET, STEPS_PER_BAR

FEATURE_DIM = 32
DENSITY_NORM = 64.0
MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)


def _onsets(roll) -> np.ndarray:
    return np.asarray(roll)[ONSET]


def _n_bars(roll) -> int:
    return np.asarray(roll).shape[1] // STEPS_PER_BAR


def pitch_class_histogram(roll) -> np.ndarray:
    """Onset counts per pitch class (unnormalized)."""
    per_pitch = _onsets(roll).sum(axis=0).astype(np.float64)
    hist = np.zeros(12)
    np.add.at(hist, np.arange(per_pitch.size) % 12, per_pitch)
    return hist


def entropy_bits(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def pche(roll) -> float:
    """Pitch-class histogram entropy in bits; 0 for an empty roll."""
    return entropy_bits(pitch_class_histogram(roll))


def grooving_pattern(roll, bar_index: int) -> np.ndarray:
    """16 flags: does any note start on each step of the bar."""
    start = bar_index * STEPS_PER_BAR
    bar = _onsets(roll)[start:start + STEPS_PER_BAR]
    return (bar.sum(axis=1) > 0).astype(np.uint8)


def grooving_similarity(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return 1.0 - float(np.count_nonzero(a != b)) / a.size


def pattern_gps(patterns) -> float | None:
    """Mean pairwise grooving similarity over the given bar patterns."""
    patterns = list(patterns)
    if len(patterns) < 2:
        return None
    sims = [grooving_similarity(a, b) for a, b in itertools.combinations(patterns, 2)]
    return float(np.mean(sims))


def gps(roll) -> float | None:
    """Grooving pattern similarity over the roll's non-empty bars."""
    patterns = [grooving_pattern(roll, b) for b in range(_n_bars(roll))]
    return pattern_gps([p for p in patterns if p.any()])


def _bar_features(roll) -> np.ndarray:
    onsets = _onsets(roll)
    feats = []
    for b in range(_n_bars(roll)):
        bar = onsets[b * STEPS_PER_BAR:(b + 1) * STEPS_PER_BAR]
        hist = np.zeros(12)
        np.add.at(hist, np.arange(bar.shape[1]) % 12, bar.sum(axis=0))
        if hist.sum():
            hist /= hist.sum()
        feats.append(np.concatenate([grooving_pattern(roll, b), hist]))
    return np.array(feats)


def si(roll, lag_range: tuple[int, int] = (1, 4)) -> float:
    """Structureness: best mean cosine similarity between bars ``lag`` apart.

    Each bar is described by its grooving pattern followed by its normalized
    pitch-class histogram. Empty bars are left out of the averages. Returns
    0.0 when no lag has a pair of non-empty bars.
    """
    lo, hi = lag_range
    if not 1 <= lo <= hi <= 7:
        raise ValueError(f"lag range must satisfy 1 <= lo <= hi <= 7, got {lag_range}")
    feats = _bar_features(roll)
    norms = np.linalg.norm(feats, axis=1)
    best = None
    for lag in range(lo, hi + 1):
        sims = [feats[b] @ feats[b + lag] / (norms[b] * norms[b + lag])
                for b in range(len(feats) - lag) if norms[b] > 0 and norms[b + lag] > 0]
        if sims:
            value = float(np.mean(sims))
            best = value if best is None else max(best, value)
    return 0.0 if best is None else float(np.clip(best, 0.0, 1.0))


def scales() -> list[tuple[str, frozenset]]:
    out = []
    for tonic in range(12):
        out.append((f"{tonic}-major", frozenset((tonic + s) % 12 for s in MAJOR_STEPS)))
        out.append((f"{tonic}-minor", frozenset((tonic + s) % 12 for s in MINOR_STEPS)))
    return out


def sc(roll) -> float | None:
    """Largest fraction of onsets inside one major or minor scale."""
    hist = pitch_class_histogram(roll)
    total = hist.sum()
    if total == 0:
        return None
    return float(max(hist[list(pcs)].sum() for _, pcs in scales()) / total)


def extract_feature(roll) -> np.ndarray:
    """32-dim descriptor: pitch-class distribution, mean groove, note density.

    Layout: 12 L1-normalized pitch-class weights, the 16-step grooving
    pattern averaged over bars, then mean/std/min/max onsets per bar divided
    by 64.
    """
    hist = pitch_class_histogram(roll)
    if hist.sum():
        hist = hist / hist.sum()
    bars = _n_bars(roll)
    onsets = _onsets(roll)
    if bars == 0:
        return np.zeros(FEATURE_DIM)
    groove = np.mean([grooving_pattern(roll, b) for b in range(bars)], axis=0)
    per_bar = np.array([onsets[b * STEPS_PER_BAR:(b + 1) * STEPS_PER_BAR].sum()
                        for b in range(bars)], dtype=np.float64)
    density = np.array([per_bar.mean(), per_bar.std(), per_bar.min(), per_bar.max()])
    return np.concatenate([hist, groove, density / DENSITY_NORM])


def random_split(vectors, seed: int):
    """Shuffle and cut into two equal halves; an odd item out is dropped."""
    vectors = list(vectors)
    order = np.random.default_rng(seed).permutation(len(vectors))
    half = len(vectors) // 2
    return [vectors[i] for i in order[:half]], [vectors[i] for i in order[half:2 * half]]


def diversity(set_a, set_b) -> float:
    """Mean Euclidean distance between index-aligned pairs."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError(f"sets differ in size: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("diversity needs at least one pair")
    return float(np.linalg.norm(a - b, axis=1).mean())


def split_diversity(vectors, seed: int) -> float | None:
    a, b = random_split(vectors, seed)
    return diversity(a, b) if a else None


@dataclass(frozen=True)
class RetrievalConfig:
    m: int = 64
    ks: tuple[int, ...] = (5, 10, 20)
    seed: int = 0

    def __post_init__(self):
        for k in self.ks:
            if not 1 <= k < self.m:
                raise ValueError(f"need 1 <= K < M, got K={k}, M={self.m}")


def retrieval_ranks(generated, pool: dict, cfg: RetrievalConfig) -> list[int]:
    """1-based rank of each item's ground truth among ``M`` candidates.

    ``generated`` holds ``(vector, ground_truth_id)`` pairs. Every item draws
    ``M - 1`` distractors from the rest of the pool with one shared seeded
    generator; candidates are ordered by distance, then by id.
    """
    ids = sorted(pool)
    if len(ids) < cfg.m:
        raise ValueError(f"pool has {len(ids)} entries, M={cfg.m} needs at least that many")
    rng = np.random.default_rng(cfg.seed)
    ranks = []
    for vec, gt in generated:
        if gt not in pool:
            raise KeyError(f"ground truth {gt!r} is not in the pool")
        others = [i for i in ids if i != gt]
        pick = rng.choice(len(others), size=cfg.m - 1, replace=False)
        candidates = [gt] + [others[j] for j in pick]
        vec = np.asarray(vec, dtype=np.float64)
        dist = {c: float(np.linalg.norm(np.asarray(pool[c]) - vec)) for c in candidates}
        order = sorted(candidates, key=lambda c: (dist[c], c))
        ranks.append(order.index(gt) + 1)
    return ranks


def retrieval_precision(generated, pool: dict, cfg: RetrievalConfig) -> dict[int, float]:
    """P@K for each configured K: share of items whose ground truth ranks <= K."""
    ranks = np.array(retrieval_ranks(generated, pool, cfg))
    if ranks.size == 0:
        raise ValueError("no generated items")
    return {k: float((ranks <= k).mean()) for k in cfg.ks}


def null_upper_bound(k: int, m: int, n_items: int, n_se: float = 3.0) -> float:
    """Chance-level P@K plus ``n_se`` standard errors for ``n_items`` trials."""
    p = k / m
    return p + n_se * math.sqrt(p * (1 - p) / n_items)


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return (float(np.mean(vals)) if vals else None), len(vals)


@dataclass
class EvaluationReport:
    records: list[dict] = field(default_factory=list)

    def add(self, name: str, value, count: int, config: dict | None = None) -> None:
        self.records.append({"name": name, "value": value, "count": count,
                             "config": config or {}})

    def value(self, name: str):
        for r in self.records:
            if r["name"] == name:
                return r["value"]
        raise KeyError(name)

    def to_text(self) -> str:
        lines = []
        for r in self.records:
            value = "absent" if r["value"] is None else f"{r['value']:.6f}"
            config = ",".join(f"{k}={v}" for k, v in sorted(r["config"].items())) or "-"
            lines.append(f"name={r['name']}\tvalue={value}\tcount={r['count']}\tconfig={config}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"metrics": self.records}, indent=2, sort_keys=True) + "\n"


def evaluate_corpus(generated: dict, ground_truth: dict, cfg: RetrievalConfig,
                    lag_range=(1, 4), diversity_seed: int = 0) -> EvaluationReport:
    """Corpus report over ``{id: roll}`` maps of generated and ground-truth rolls.

    Quality metrics are averaged over generated rolls. Retrieval ranks each
    generated roll's own ground truth within the ground-truth pool.
    """
    report = EvaluationReport()
    ids = sorted(generated)
    rolls = [generated[i] for i in ids]
    for name, fn in (("PCHE", pche), ("GPS", gps)):
        report.add(name, *_mean_defined(fn(r) for r in rolls))
    value, count = _mean_defined(si(r, lag_range) for r in rolls)
    report.add("SI", value, count, {"lag_min": lag_range[0], "lag_max": lag_range[1]})
    report.add("SC", *_mean_defined(sc(r) for r in rolls))
    feats = {i: extract_feature(generated[i]) for i in ids}
    report.add("Diversity", split_diversity([feats[i] for i in ids], diversity_seed),
               len(ids) // 2, {"seed": diversity_seed})
    pool = {i: extract_feature(r) for i, r in ground_truth.items()}
    precision = retrieval_precision([(feats[i], i) for i in ids], pool, cfg)
    for k in cfg.ks:
        report.add(f"P@{k}", precision[k], len(ids), {"M": cfg.m, "seed": cfg.seed})
    return report
