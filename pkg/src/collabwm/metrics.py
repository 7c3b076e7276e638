"""EER, Table-style evaluation reports and the multi-condition evaluation harness."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import patchwork as pw
from .augment import ALL_CONDITIONS, Condition, NoiseCorpus, apply_condition
from .manifest import CorpusManifest, split_manifest  # noqa: F401  (re-exported)
from .signal import AudioClip, load_wav

RowKey = tuple  # (system, training, augmentation, role)


@dataclass(frozen=True)
class ScoreSet:
    positive: np.ndarray  # natural / real class, higher = more real
    negative: np.ndarray  # generated / watermarked class

    def __post_init__(self):
        pos = np.asarray(self.positive, dtype=np.float64).reshape(-1)
        neg = np.asarray(self.negative, dtype=np.float64).reshape(-1)
        if pos.size == 0 or neg.size == 0:
            raise ValueError("EER needs at least one score in each class")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)


def error_curves(scores: ScoreSet):
    """Thresholds (with -inf/+inf) and FRR/FAR at each.

    FRR(t) is the fraction of positives below ``t``; FAR(t) the fraction of
    negatives at or above ``t``.
    """
    pos = np.sort(scores.positive)
    neg = np.sort(scores.negative)
    thr = np.concatenate([[-np.inf], np.unique(np.concatenate([pos, neg])), [np.inf]])
    frr = np.searchsorted(pos, thr, side="left") / pos.size
    far = 1.0 - np.searchsorted(neg, thr, side="left") / neg.size
    return thr, frr, far


def crossing(thr: np.ndarray, frr: np.ndarray, far: np.ndarray) -> tuple[float, float]:
    """Interpolated FAR/FRR crossing of a threshold sweep (FAR - FRR is non-increasing)."""
    diff = far - frr
    j = int(np.argmax(diff <= 0))
    if diff[j] == 0:
        return float(frr[j]), float(thr[j])
    alpha = diff[j - 1] / (diff[j - 1] - diff[j])
    rate = frr[j - 1] + alpha * (frr[j] - frr[j - 1])
    lo, hi = thr[j - 1], thr[j]
    if np.isfinite(lo) and np.isfinite(hi):
        t = lo + alpha * (hi - lo)
    else:
        t = hi if np.isfinite(hi) else lo
    return float(rate), float(t)


def eer(scores: ScoreSet | tuple) -> tuple[float, float]:
    """Equal error rate (as a fraction) and the threshold where it occurs."""
    if not isinstance(scores, ScoreSet):
        scores = ScoreSet(*scores)
    return crossing(*error_curves(scores))


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    conditions: tuple[Condition, ...] = ALL_CONDITIONS
    rounds: int = 1
    rows: dict = field(default_factory=dict)  # RowKey -> {Condition: [per-round values]}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.conditions = tuple(Condition.parse(c) for c in self.conditions)
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def add(self, key: RowKey, condition, value: float) -> None:
        cond = Condition.parse(condition)
        cells = self.rows.setdefault(tuple(key), {c: [] for c in self.conditions})
        if len(cells[cond]) >= self.rounds:
            raise ValueError(f"cell {key}/{cond.value} already has {self.rounds} values")
        cells[cond].append(float(value))

    def values(self, key: RowKey, condition) -> list[float]:
        return self.rows[tuple(key)][Condition.parse(condition)]

    def mean(self, key: RowKey, condition) -> float:
        vals = self.values(key, condition)
        if len(vals) != self.rounds:
            raise ValueError(f"cell {key}/{condition} has {len(vals)} of {self.rounds} rounds")
        return float(np.mean(vals))

    def merge(self, other: "EvalReport") -> "EvalReport":
        if other.conditions != self.conditions or other.rounds != self.rounds:
            raise ValueError("reports have different shapes")
        for k, cells in other.rows.items():
            if k in self.rows:
                raise ValueError(f"duplicate row {k}")
            self.rows[k] = {c: list(v) for c, v in cells.items()}
        return self

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["system", "training", "augmentation", "role"] + [c.value for c in self.conditions])
        for key, cells in self.rows.items():
            w.writerow(list(key) + [f"{self.mean(key, c):.6f}" for c in self.conditions])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def rounds_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["system", "training", "augmentation", "role", "condition", "round", "value"])
        for key, cells in self.rows.items():
            for c in self.conditions:
                for r, v in enumerate(cells[c]):
                    w.writerow(list(key) + [c.value, r, f"{v:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_rounds_csv(cls, text: str) -> "EvalReport":
        """Inverse of :meth:`rounds_csv` (values carry six decimals)."""
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty rounds table")
        conditions = tuple(dict.fromkeys(Condition.parse(r["condition"]) for r in rows))
        rounds = max(int(r["round"]) for r in rows) + 1
        report = cls(conditions, rounds)
        for r in rows:
            report.add((r["system"], r["training"], r["augmentation"], r["role"]), r["condition"], float(r["value"]))
        for key in report.rows:
            for c in conditions:
                report.mean(key, c)  # raises on ragged cells
        return report

    def to_markdown(self) -> str:
        head = ["System", "Training", "Augmentation", "Role"] + [c.value.capitalize() if c.value != "s+n" else "S+N"
                                                               for c in self.conditions]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for key, cells in self.rows.items():
            vals = [f"{100 * self.mean(key, c):.2f}" for c in self.conditions]
            lines.append("| " + " | ".join(list(map(str, key)) + vals) + " |")
        return "\n".join(lines) + "\n"

    def write(self, stem) -> None:
        """Write ``<stem>.csv``, ``<stem>_rounds.csv`` and ``<stem>.md``."""
        stem = str(stem)
        with open(stem + ".csv", "w") as fh:
            self.to_csv(fh)
        with open(stem + "_rounds.csv", "w") as fh:
            fh.write(self.rounds_csv())
        with open(stem + ".md", "w") as fh:
            fh.write(self.to_markdown())


# ---------------------------------------------------------------------------
# evaluation harness


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _clips(source, split: str = "test") -> list[AudioClip]:
    if isinstance(source, CorpusManifest):
        paths = source.paths(split)
        if not paths:
            raise ValueError(f"manifest has no {split!r} records")
        return [load_wav(p) for p in paths]
    clips = list(source)
    if not clips:
        raise ValueError("no clips to evaluate")
    return clips


PATCHWORK_ROW = ("spectral patchwork", "-", "-", "utterance error")
PATCHWORK_BER_ROW = ("spectral patchwork", "-", "-", "bit error")


def evaluate_patchwork(manifest, key: pw.WatermarkKey, grid: pw.StrengthGrid = pw.StrengthGrid.linear(),
                       conditions: Sequence = ALL_CONDITIONS, rounds: int = 20, seed: int = 0,
                       payload: pw.Payload | None = None, noise_corpus: NoiseCorpus | None = None,
                       speeds: Sequence[float] | None = None, jobs: int = 1) -> EvalReport:
    """Utterance- and bit-level patchwork error rates under each condition.

    ``manifest`` is a :class:`CorpusManifest` (its test split is used) or a
    sequence of clips. The strength of each utterance is searched once on the
    clean signal; every round redraws stretch factors and noise.
    """
    clips = _clips(manifest)
    conditions = tuple(Condition.parse(c) for c in conditions)
    payload = payload if payload is not None else pw.Payload.random(seed)
    speeds = tuple(pw.speed_grid(step=0.005)) if speeds is None else tuple(speeds)
    strengths = _map(lambda c: pw.search_strength(c, payload, key, grid), clips, jobs)
    marked = [pw.embed(c, payload, key, s.strength) for c, s in zip(clips, strengths)]

    report = EvalReport(conditions, rounds)
    report.meta.update(strengths=[s.strength for s in strengths], failures=sum(not s.success for s in strengths))
    for r in range(rounds):
        for ci, cond in enumerate(conditions):
            def run(i):
                y = apply_condition(marked[i], cond, rng_seed=[seed, r, ci, i], noise_corpus=noise_corpus)
                det = pw.detect(y, key, payload, speeds=speeds)
                return (not det.hard_decision), det.bit_errors(payload)
            out = _map(run, range(len(clips)), jobs)
            report.add(PATCHWORK_ROW, cond, np.mean([o[0] for o in out]))
            report.add(PATCHWORK_BER_ROW, cond, np.mean([o[1] for o in out]) / pw.PAYLOAD_BITS)
    return report


def evaluate_detector(score_fn: Callable[[AudioClip], float], real: Sequence[AudioClip],
                      generated: Sequence[AudioClip], conditions: Sequence = ALL_CONDITIONS, rounds: int = 20,
                      seed: int = 0, noise_corpus: NoiseCorpus | None = None,
                      row: RowKey = ("detector", "-", "-", "-"), jobs: int = 1) -> EvalReport:
    """EER of ``score_fn`` (higher = more real) with every condition applied to both classes."""
    real, generated = list(real), list(generated)
    if not real or not generated:
        raise ValueError("both clip sets must be non-empty")
    conditions = tuple(Condition.parse(c) for c in conditions)
    report = EvalReport(conditions, rounds)
    for r in range(rounds):
        for ci, cond in enumerate(conditions):
            def score(item):
                label, i, clip = item
                return float(score_fn(apply_condition(clip, cond, [seed, r, ci, label, i], noise_corpus)))
            items = [(0, i, c) for i, c in enumerate(real)] + [(1, i, c) for i, c in enumerate(generated)]
            s = np.array(_map(score, items, jobs))
            report.add(row, cond, eer(ScoreSet(s[:len(real)], s[len(real):]))[0])
    return report

