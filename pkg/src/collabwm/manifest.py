"""Corpus manifests: seeded 80/10/10 splits and JSONL round-tripping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class Record:
    path: str
    split: str
    group: str | None = None

    def to_json(self) -> dict:
        d = {"path": self.path, "split": self.split}
        if self.group is not None:
            d["group"] = self.group
        return d


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple[Record, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for r in self.records:
            if r.split not in SPLITS:
                raise ValueError(f"unknown split {r.split!r}")
        seen = {}
        for r in self.records:
            if seen.setdefault(r.path, r.split) != r.split:
                raise ValueError(f"{r.path} appears in two splits")

    def paths(self, split: str) -> list[str]:
        return [r.path for r in self.records if r.split == split]

    def counts(self) -> dict[str, int]:
        return {s: len(self.paths(s)) for s in SPLITS}

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "CorpusManifest":
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    records.append(Record(str(d["path"]), str(d["split"]), d.get("group")))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from None
        return cls(tuple(records))


def _split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    ratios = np.asarray(ratios, dtype=np.float64)
    exact = n * ratios / ratios.sum()
    sizes = np.floor(exact).astype(int)
    order = np.argsort(-(exact - sizes), kind="stable")
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def split_manifest(paths: Iterable[str], ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0,
                   groups: Sequence[str] | None = None) -> CorpusManifest:
    """Shuffle ``paths`` with ``seed`` and split them train/val/test.

    When ``groups`` is given every group lands in exactly one split.
    """
    paths = list(paths)
    if len(paths) < 10:
        raise ValueError(f"need at least 10 paths to split, got {len(paths)}")
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ValueError("ratios must be three positive numbers")
    rng = np.random.default_rng(seed)
    targets = _split_sizes(len(paths), ratios)
    if groups is None:
        perm = rng.permutation(len(paths))
        bounds = np.cumsum([0] + targets)
        split_of = {}
        for s, name in enumerate(SPLITS):
            for i in perm[bounds[s]:bounds[s + 1]]:
                split_of[int(i)] = name
        return CorpusManifest(tuple(Record(p, split_of[i]) for i, p in enumerate(paths)))

    if len(groups) != len(paths):
        raise ValueError("groups must align with paths")
    members: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        members.setdefault(str(g), []).append(i)
    names = sorted(members)
    biggest = max(len(v) for v in members.values())
    if biggest > max(targets):
        raise ValueError(f"a group of {biggest} items is larger than any split")
    filled = [0, 0, 0]
    split_of = {}
    # largest groups first so the small ones can even out the remainders
    order = sorted(rng.permutation(len(names)), key=lambda i: -len(members[names[i]]))
    for gi in order:
        g = names[gi]
        size = len(members[g])
        deficit = [targets[s] - filled[s] for s in range(3)]
        fits = [s for s in range(3) if deficit[s] >= size]
        s = max(fits or range(3), key=lambda k: deficit[k])
        filled[s] += size
        split_of[g] = SPLITS[s]
    return CorpusManifest(tuple(Record(p, split_of[str(g)], str(g)) for p, g in zip(paths, groups)))
