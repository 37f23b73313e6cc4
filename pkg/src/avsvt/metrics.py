"""Note-level transcription scores: COn, COff, COnP and COnPOff.

Matching follows the usual note-transcription convention: a reference and an
estimated note may be paired when they agree within the tolerances of the
chosen mode, and the score counts a maximum-cardinality one-to-one pairing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .notation import NoteEvent, NoteSequence

MODES = ("COnPOff", "COnP", "COn", "COff")

# Time/pitch differences are rounded before comparison so that e.g.
# 0.35 - 0.30 counts as exactly 50 ms.
ROUND_DECIMALS = 7


@dataclass(frozen=True)
class ToleranceProfile:
    onset_tol: float = 0.05
    offset_tol_abs: float = 0.05
    offset_tol_ratio: float = 0.2
    pitch_tol: float = 50.0

    def __post_init__(self):
        for name in ("onset_tol", "offset_tol_abs", "offset_tol_ratio", "pitch_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


TOLERANCE_PRESETS = {
    "tol1": ToleranceProfile(0.05, 0.05, 0.2, 50.0),
    "tol2": ToleranceProfile(0.10, 0.10, 0.2, 100.0),
}


def get_tolerance(name_or_profile) -> ToleranceProfile:
    if isinstance(name_or_profile, ToleranceProfile):
        return name_or_profile
    try:
        return TOLERANCE_PRESETS[name_or_profile]
    except KeyError:
        raise ValueError(f"unknown tolerance preset {name_or_profile!r}; "
                         f"choose from {sorted(TOLERANCE_PRESETS)}") from None


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")


def note_match(ref: NoteEvent, est: NoteEvent, tol: ToleranceProfile, mode: str) -> bool:
    _check_mode(mode)
    ok = True
    if mode != "COff":
        ok &= round(abs(ref.onset - est.onset), ROUND_DECIMALS) <= tol.onset_tol
    if mode in ("COnP", "COnPOff"):
        ok &= round(100.0 * abs(ref.pitch - est.pitch), ROUND_DECIMALS) <= tol.pitch_tol
    if mode in ("COff", "COnPOff"):
        limit = max(tol.offset_tol_abs, tol.offset_tol_ratio * (ref.offset - ref.onset))
        ok &= round(abs(ref.offset - est.offset), ROUND_DECIMALS) <= limit
    return bool(ok)


def match_matrix(ref: NoteSequence, est: NoteSequence, tol: ToleranceProfile, mode: str) -> np.ndarray:
    """Boolean ``(len(ref), len(est))`` matrix of admissible pairs (vectorised :func:`note_match`)."""
    _check_mode(mode)
    r = np.array([tuple(n) for n in ref.notes], dtype=np.float64).reshape(-1, 3)
    e = np.array([tuple(n) for n in est.notes], dtype=np.float64).reshape(-1, 3)
    ok = np.ones((len(r), len(e)), dtype=bool)
    if mode != "COff":
        ok &= np.round(np.abs(r[:, None, 0] - e[None, :, 0]), ROUND_DECIMALS) <= tol.onset_tol
    if mode in ("COnP", "COnPOff"):
        ok &= np.round(100.0 * np.abs(r[:, None, 2] - e[None, :, 2]), ROUND_DECIMALS) <= tol.pitch_tol
    if mode in ("COff", "COnPOff"):
        limit = np.maximum(tol.offset_tol_abs, tol.offset_tol_ratio * (r[:, 1] - r[:, 0]))
        ok &= np.round(np.abs(r[:, None, 1] - e[None, :, 1]), ROUND_DECIMALS) <= limit[:, None]
    return ok


def max_bipartite_matching(adjacency: np.ndarray) -> list[tuple[int, int]]:
    """Hopcroft-Karp maximum-cardinality matching on a boolean adjacency matrix.

    Returns ``(row, col)`` pairs sorted by row.
    """
    n_left, n_right = adjacency.shape
    graph = [np.flatnonzero(adjacency[u]).tolist() for u in range(n_left)]
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    inf = n_left + n_right + 1

    while True:
        # BFS layers from free left vertices
        dist = [inf] * n_left
        queue = deque()
        for u in range(n_left):
            if match_l[u] == -1:
                dist[u] = 0
                queue.append(u)
        found = False
        while queue:
            u = queue.popleft()
            for v in graph[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            break

        def augment(u):
            for v in graph[u]:
                w = match_r[v]
                if w == -1 or (dist[w] == dist[u] + 1 and augment(w)):
                    match_l[u] = v
                    match_r[v] = u
                    return True
            dist[u] = inf
            return False

        for u in range(n_left):
            if match_l[u] == -1:
                augment(u)

    return [(u, v) for u, v in enumerate(match_l) if v != -1]


@dataclass
class MetricScore:
    precision: float
    recall: float
    f1: float
    n_ref: int
    n_est: int
    matches: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_matched(self) -> int:
        return len(self.matches)


def prf(n_matched: int, n_ref: int, n_est: int) -> tuple[float, float, float]:
    """Precision, recall and F1; two empty sequences score a perfect 1.0."""
    if n_ref == 0 and n_est == 0:
        return 1.0, 1.0, 1.0
    precision = n_matched / n_est if n_est else 0.0
    recall = n_matched / n_ref if n_ref else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass
class EvalReport:
    scores: dict[str, MetricScore]
    song_id: str | None = None

    def __getitem__(self, mode: str) -> MetricScore:
        return self.scores[mode]

    def f1(self) -> dict[str, float]:
        return {m: s.f1 for m, s in self.scores.items()}

    def as_row(self) -> dict[str, float | str]:
        row: dict[str, float | str] = {"song_id": self.song_id or ""}
        for mode, s in self.scores.items():
            row[f"{mode}_precision"] = s.precision
            row[f"{mode}_recall"] = s.recall
            row[f"{mode}_f1"] = s.f1
        return row


def evaluate(ref: NoteSequence, est: NoteSequence, tol=TOLERANCE_PRESETS["tol1"],
             modes: Sequence[str] = MODES, song_id: str | None = None) -> EvalReport:
    tol = get_tolerance(tol)
    scores = {}
    for mode in modes:
        pairs = max_bipartite_matching(match_matrix(ref, est, tol, mode))
        p, r, f = prf(len(pairs), len(ref), len(est))
        scores[mode] = MetricScore(p, r, f, len(ref), len(est), pairs)
    return EvalReport(scores, song_id)


@dataclass
class DatasetReport:
    """Per-song mean scores (the headline numbers) plus corpus-pooled scores."""

    mean: dict[str, dict[str, float]]
    pooled: dict[str, dict[str, float]]
    songs: list[EvalReport]

    def f1(self) -> dict[str, float]:
        return {m: v["f1"] for m, v in self.mean.items()}


def aggregate(reports: Sequence[EvalReport]) -> DatasetReport:
    if not reports:
        raise ValueError("aggregate needs at least one report")
    modes = list(reports[0].scores)
    mean, pooled = {}, {}
    for mode in modes:
        per = [r.scores[mode] for r in reports]
        mean[mode] = {
            "precision": float(np.mean([s.precision for s in per])),
            "recall": float(np.mean([s.recall for s in per])),
            "f1": float(np.mean([s.f1 for s in per])),
        }
        p, r, f = prf(sum(s.n_matched for s in per), sum(s.n_ref for s in per), sum(s.n_est for s in per))
        pooled[mode] = {"precision": p, "recall": r, "f1": f}
    return DatasetReport(mean, pooled, list(reports))


def report_to_dict(report: EvalReport | DatasetReport) -> Mapping:
    if isinstance(report, DatasetReport):
        return {"mean": report.mean, "pooled": report.pooled,
                "songs": [r.as_row() for r in report.songs]}
    return {mode: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                   "n_ref": s.n_ref, "n_est": s.n_est, "matches": [list(p) for p in s.matches]}
            for mode, s in report.scores.items()}
