"""Labelled datasets on disk and deterministic train/test splitting.

A dataset directory holds one CSV per sequence plus ``manifest.txt``::

    format=leakhmm-features/1
    labels=no_leak,leak
    seed=7
    generator=numpy.random.Generator(PCG64)
    # filename,label
    no_leak_000.csv,no_leak
    leak_000.csv,leak

Leading ``key=value`` lines are metadata; ``#`` lines are comments; the rest
are ``filename,label`` pairs.  Waveform directories use the same manifest
layout with waveform CSV files.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, ParseError
from .features import (
    ObservationSequence,
    Waveform,
    read_features,
    read_waveform,
    write_features,
    write_waveform,
)
from .synth import rng_for

MANIFEST = "manifest.txt"
FEATURE_FORMAT = "leakhmm-features/1"
_META_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)=(.*)$")


@dataclass
class LabeledDataset:
    sequences: list
    label_names: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.label_names = [str(s) for s in self.label_names]
        if len(set(self.label_names)) != len(self.label_names):
            raise InvalidInputError("label names must be distinct")
        names = [s.name for s in self.sequences]
        if len(set(names)) != len(names) or not all(names):
            raise InvalidInputError("sequences need distinct non-empty names")
        for s in self.sequences:
            if s.labels is None:
                raise InvalidInputError(f"sequence {s.name!r} has no labels")
            if s.labels.size and (s.labels.min() < 0 or s.labels.max() >= len(self.label_names)):
                raise InvalidInputError(f"sequence {s.name!r} has a label outside 0..{len(self.label_names) - 1}")

    def __len__(self):
        return len(self.sequences)

    @property
    def label_map(self) -> dict:
        return {name: i for i, name in enumerate(self.label_names)}

    def sequence_label(self, seq: ObservationSequence) -> int:
        """Most frequent label of ``seq`` (lowest index on ties)."""
        return int(np.argmax(np.bincount(seq.labels, minlength=len(self.label_names))))

    def subset(self, indices: Sequence[int], **meta) -> "LabeledDataset":
        return LabeledDataset(
            [self.sequences[i] for i in indices], self.label_names, {**self.metadata, **meta}
        )


@dataclass
class SplitSpec:
    train_fraction: float = 0.5
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise InvalidInputError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


# -- manifests -----------------------------------------------------------------


def read_manifest(path) -> tuple[dict, list]:
    path = Path(path)
    meta, entries = {}, []
    in_header = True
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _META_LINE.match(line)
        if in_header and m:
            meta[m.group(1)] = m.group(2)
            continue
        in_header = False
        parts = line.split(",")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ParseError(path, lineno, "expected 'filename,label'")
        entries.append((parts[0].strip(), parts[1].strip()))
    return meta, entries


def write_manifest(path, metadata: dict, entries: Sequence[tuple[str, str]]) -> None:
    lines = [f"{k}={v}" for k, v in metadata.items()]
    lines.append("# filename,label")
    lines.extend(f"{f},{lab}" for f, lab in entries)
    Path(path).write_text("\n".join(lines) + "\n")


def _clear_previous(directory: Path) -> None:
    manifest = directory / MANIFEST
    if manifest.exists():
        _, entries = read_manifest(manifest)
        for fname, _ in entries:
            (directory / fname).unlink(missing_ok=True)


# -- waveforms -------------------------------------------------------------------


def load_waveform_dir(path) -> list[tuple[str, Waveform, str]]:
    """Read every ``*.csv`` waveform in ``path`` with its manifest label.

    Files are returned in lexicographic filename order as
    ``(stem, waveform, label)`` triples.
    """
    path = Path(path)
    if not path.is_dir():
        raise InvalidInputError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix == ".csv")
    if not files:
        return []
    manifest = path / MANIFEST
    if not manifest.exists():
        raise InvalidInputError(f"{path} has waveform files but no {MANIFEST}")
    _, entries = read_manifest(manifest)
    labels = dict(entries)
    out = []
    for f in files:
        if f.name not in labels:
            raise InvalidInputError(f"{f.name} has no label in {manifest}")
        out.append((f.stem, read_waveform(f), labels[f.name]))
    return out


def save_waveform_dir(path, recordings, metadata: dict) -> None:
    path = Path(path)
    path.mkdir(exist_ok=True)
    _clear_previous(path)
    entries = []
    for name, w, label in recordings:
        write_waveform(path / f"{name}.csv", w)
        entries.append((f"{name}.csv", label))
    write_manifest(path / MANIFEST, metadata, entries)


# -- feature datasets ------------------------------------------------------------


def save_dataset(path, ds: LabeledDataset) -> None:
    path = Path(path)
    path.mkdir(exist_ok=True)
    _clear_previous(path)
    entries = []
    for seq in ds.sequences:
        fname = f"{seq.name}.csv"
        write_features(path / fname, seq, ds.label_names)
        entries.append((fname, ds.label_names[ds.sequence_label(seq)]))
    meta = {"format": FEATURE_FORMAT, "labels": ",".join(ds.label_names)}
    meta.update({k: v for k, v in ds.metadata.items() if k not in meta})
    write_manifest(path / MANIFEST, meta, entries)


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    manifest = path / MANIFEST
    if not manifest.exists():
        raise InvalidInputError(f"no {MANIFEST} in {path}")
    meta, entries = read_manifest(manifest)
    if meta.get("format") != FEATURE_FORMAT:
        raise ParseError(manifest, 1, f"not a feature dataset (format={meta.get('format')!r})")
    label_names = meta["labels"].split(",") if meta.get("labels") else []
    seqs = []
    for fname, label in entries:
        if label not in label_names:
            raise InvalidInputError(f"{fname}: label {label!r} is not one of {label_names}")
        seq = read_features(path / fname, label_names)
        if seq.labels is None:
            seq.labels = np.full(len(seq), label_names.index(label))
        seqs.append(seq)
    meta = {k: v for k, v in meta.items() if k not in ("format", "labels")}
    return LabeledDataset(seqs, label_names, meta)


# -- splitting -------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(data: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Partition sequences into train and test sets.

    The train count is ``round(train_fraction * n)`` (halves round up).  In
    stratified mode that total is shared across labels by largest remainder
    (ties to the lower label index) and every label keeps at least one
    sequence on each side.  Both halves preserve the input order.
    """
    n = len(data)
    if n < 2:
        raise InvalidInputError("need at least 2 sequences to split")
    rng = rng_for(spec.seed)
    if spec.stratified:
        by_label = {}
        for i, seq in enumerate(data.sequences):
            by_label.setdefault(data.sequence_label(seq), []).append(i)
        groups = [by_label[k] for k in sorted(by_label)]
        for k, g in zip(sorted(by_label), groups):
            if len(g) < 2:
                raise InvalidInputError(
                    f"label {data.label_names[k]!r} has {len(g)} sequence(s); stratified split needs 2"
                )
        quotas = [spec.train_fraction * len(g) for g in groups]
        take = [int(math.floor(q)) for q in quotas]
        remaining = _round_half_up(spec.train_fraction * n) - sum(take)
        order = sorted(range(len(groups)), key=lambda i: (-(quotas[i] - take[i]), i))
        for i in order[: max(0, remaining)]:
            take[i] += 1
        take = [min(max(t, 1), len(g) - 1) for t, g in zip(take, groups)]
    else:
        groups = [list(range(n))]
        take = [min(max(_round_half_up(spec.train_fraction * n), 1), n - 1)]

    train = []
    for g, t in zip(groups, take):
        perm = rng.permutation(len(g))
        train.extend(g[i] for i in perm[:t])
    chosen = set(train)
    train_idx = sorted(chosen)
    test_idx = [i for i in range(n) if i not in chosen]
    meta = {"split_seed": str(spec.seed), "train_fraction": repr(spec.train_fraction)}
    return data.subset(train_idx, part="train", **meta), data.subset(test_idx, part="test", **meta)
