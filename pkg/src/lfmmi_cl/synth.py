"""Synthetic multi-domain sequence data.

A domain is a label bigram plus a Gaussian emission process: each label has a
mean feature vector, frames are drawn around it and then passed through a
domain-specific affine "channel". Domains share the label set and feature
dimension and differ in language model, channel, and noise.

Dataset files
-------------
``<dir>/<name>.json``
    manifest: ``{"format": "lfmmi-cl-dataset", "version": 1, "name", "num_labels",
    "feature_dim", "utterances": [{"uid", "domain", "split", "num_frames",
    "num_labels", "frame_offset"}, ...]}``
``<dir>/<name>.feats``
    all frames, utterances concatenated in manifest order, row-major
    little-endian float64; utterance ``i`` occupies rows
    ``frame_offset .. frame_offset + num_frames``.
``<dir>/<name>.labels``
    one line per utterance in manifest order: ``uid label label ...``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInput
from .graph import BigramLm

NUM_LABELS = 8
FEATURE_DIM = 6
TRAIN_FRACTION = 0.9


@dataclass(eq=False)
class Utterance:
    uid: str
    features: np.ndarray
    labels: tuple[int, ...]
    domain: str
    split: str = "train"

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass(eq=False)
class Dataset:
    name: str
    num_labels: int
    feature_dim: int
    utterances: list[Utterance] = field(default_factory=list)

    @property
    def train(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "train"]

    @property
    def test(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "test"]

    def __len__(self):
        return len(self.utterances)


@dataclass(eq=False)
class DomainSpec:
    name: str
    seed: int
    num_utts: int
    utt_len_range: tuple[int, int]
    label_lm: BigramLm
    emission_means: np.ndarray
    channel_matrix: np.ndarray
    channel_bias: np.ndarray
    noise_std: float
    frames_per_label_range: tuple[int, int] = (1, 3)

    def validate(self):
        p, d = self.emission_means.shape
        if self.label_lm.num_labels != p:
            raise InvalidInput("language model and emission means disagree on label count")
        if self.channel_matrix.shape != (d, d) or self.channel_bias.shape != (d,):
            raise InvalidInput("channel transform must be d x d plus a d-vector")
        if not self.noise_std > 0:
            raise InvalidInput("noise_std must be positive")
        lo, hi = self.frames_per_label_range
        if lo < 1 or hi < lo:
            raise InvalidInput("frames_per_label_range must satisfy 1 <= min <= max")
        lo, hi = self.utt_len_range
        if lo < 1 or hi < lo:
            raise InvalidInput("utt_len_range must satisfy 1 <= min <= max")
        if self.num_utts < 1:
            raise InvalidInput("num_utts must be positive")
        trans = np.exp(self.label_lm.log_probs[:, :p])
        if np.any(trans.sum(axis=1) <= 0):
            raise InvalidInput("every LM row needs a label successor")


def num_train(num_utts: int) -> int:
    return min(num_utts, math.ceil(TRAIN_FRACTION * num_utts))


def generate_domain(spec: DomainSpec) -> Dataset:
    """Sample ``spec.num_utts`` utterances; the first 90% are train, the rest test.

    Sequence lengths are drawn uniformly from ``utt_len_range`` and labels from
    the bigram restricted to label successors (the end symbol is not sampled).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    p, d = spec.emission_means.shape
    probs = np.exp(spec.label_lm.log_probs[:, :p])
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)
    b = spec.label_lm.boundary
    n_train = num_train(spec.num_utts)
    utts = []
    for i in range(spec.num_utts):
        length = int(rng.integers(spec.utt_len_range[0], spec.utt_len_range[1] + 1))
        labels = []
        prev = b
        for _ in range(length):
            lab = int(np.searchsorted(cum[prev], rng.random(), side="right"))
            lab = min(lab, p - 1)
            labels.append(lab)
            prev = lab
        durs = rng.integers(spec.frames_per_label_range[0], spec.frames_per_label_range[1] + 1, size=length)
        frame_labels = np.repeat(labels, durs)
        clean = spec.emission_means[frame_labels] + spec.noise_std * rng.standard_normal((frame_labels.size, d))
        feats = clean @ spec.channel_matrix.T + spec.channel_bias
        utts.append(
            Utterance(
                uid=f"{spec.name}-{i:05d}",
                features=feats,
                labels=tuple(labels),
                domain=spec.name,
                split="train" if i < n_train else "test",
            )
        )
    return Dataset(spec.name, p, d, utts)


# --------------------------------------------------------------------------
# default five-domain pipeline


def stationary_distribution(trans: np.ndarray) -> np.ndarray:
    """Left eigenvector of a row-stochastic matrix for eigenvalue 1."""
    vals, vecs = np.linalg.eig(trans.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def lm_from_transitions(trans: np.ndarray, mean_length: float) -> BigramLm:
    """Bigram whose start row is the stationary distribution of ``trans``."""
    p = trans.shape[0]
    trans = trans / trans.sum(axis=1, keepdims=True)
    end = 1.0 / mean_length
    probs = np.zeros((p + 1, p + 1))
    probs[:p, :p] = (1.0 - end) * trans
    probs[:p, p] = end
    probs[p, :p] = stationary_distribution(trans)
    with np.errstate(divide="ignore"):
        return BigramLm(p, np.log(probs))


def _random_transitions(rng, p, concentration):
    trans = rng.dirichlet(np.full(p, concentration), size=p)
    np.fill_diagonal(trans, 0.0)
    return trans / trans.sum(axis=1, keepdims=True)


def _rotation(rng, d, angle):
    """Orthogonal map rotating by ``angle`` in d // 2 random planes."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    rot = np.eye(d)
    for k in range(d // 2):
        c, s = math.cos(angle), math.sin(angle)
        rot[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, -s], [s, c]]
    return q @ rot @ q.T


DOMAIN_NAMES = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class PipelineKnobs:
    """Difficulty settings for the default five-domain pipeline."""

    seed_utts: int = 2222
    step_utts: int = 555
    utt_len_range: tuple[int, int] = (4, 10)
    mean_scale: float = 1.0
    noise: float = 1.0
    low_noise: float = 0.6
    mild_angle: float = 0.3
    mild_offset: float = 0.5
    strong_angle: float = 0.5
    strong_offset: float = 0.5
    strong_gain: float = 1.0
    lm_concentration: float = 0.05
    hard_lm_concentration: float = 0.05


def default_pipeline_specs(master_seed: int, knobs: PipelineKnobs | None = None) -> list[DomainSpec]:
    """Seed domain A followed by four expansion domains B..E.

    A is the large seed domain. B keeps A's means under a mild rotation and
    offset, C is low-noise under a different mild channel, and D and E have
    strong channels and their own label statistics.
    """
    k = knobs or PipelineKnobs()
    rng = np.random.default_rng([master_seed, 0x5EED])
    p, d = NUM_LABELS, FEATURE_DIM
    means = rng.normal(0.0, k.mean_scale, size=(p, d))
    base_lm = lm_from_transitions(_random_transitions(rng, p, k.lm_concentration), 7.0)
    seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=len(DOMAIN_NAMES))]

    def offset(norm):
        v = rng.normal(size=d)
        return norm * v / np.linalg.norm(v)

    def hard_lm():
        return lm_from_transitions(_random_transitions(rng, p, k.hard_lm_concentration), 7.0)

    lens = k.utt_len_range
    return [
        DomainSpec("A", seeds[0], k.seed_utts, lens, base_lm, means, np.eye(d), np.zeros(d), k.noise),
        DomainSpec("B", seeds[1], k.step_utts, lens, base_lm, means,
                   _rotation(rng, d, k.mild_angle), offset(k.mild_offset), k.noise),
        DomainSpec("C", seeds[2], k.step_utts, lens, base_lm, means,
                   _rotation(rng, d, k.mild_angle), offset(k.mild_offset), k.low_noise),
        DomainSpec("D", seeds[3], k.step_utts, lens, hard_lm(), means,
                   k.strong_gain * _rotation(rng, d, k.strong_angle), offset(k.strong_offset), k.noise),
        DomainSpec("E", seeds[4], k.step_utts, lens, hard_lm(), means,
                   k.strong_gain * _rotation(rng, d, k.strong_angle), offset(k.strong_offset), k.noise),
    ]


def generate_pipeline(master_seed: int, knobs: PipelineKnobs | None = None) -> dict[str, Dataset]:
    return {s.name: generate_domain(s) for s in default_pipeline_specs(master_seed, knobs)}


# --------------------------------------------------------------------------
# serialization

FORMAT = "lfmmi-cl-dataset"
FORMAT_VERSION = 1


def save_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / f"{ds.name}.feats", "wb") as fh:
        for u in ds.utterances:
            fh.write(np.ascontiguousarray(u.features, dtype="<f8").tobytes())
            entries.append(
                {
                    "uid": u.uid,
                    "domain": u.domain,
                    "split": u.split,
                    "num_frames": u.num_frames,
                    "num_labels": len(u.labels),
                    "frame_offset": offset,
                }
            )
            offset += u.num_frames
    with open(directory / f"{ds.name}.labels", "w") as fh:
        for u in ds.utterances:
            fh.write(" ".join([u.uid, *map(str, u.labels)]) + "\n")
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "name": ds.name,
        "num_labels": ds.num_labels,
        "feature_dim": ds.feature_dim,
        "utterances": entries,
    }
    path = directory / f"{ds.name}.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(directory, name: str) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / f"{name}.json"
    if not manifest_path.exists():
        raise FileNotFoundError(str(manifest_path))
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise InvalidInput(f"{manifest_path}: not a version-{FORMAT_VERSION} dataset manifest")
    d = int(manifest["feature_dim"])
    raw = np.fromfile(directory / f"{name}.feats", dtype="<f8")
    label_lines = (directory / f"{name}.labels").read_text().splitlines()
    entries = manifest["utterances"]
    if len(label_lines) != len(entries):
        raise InvalidInput(f"{name}: label file and manifest disagree on utterance count")
    utts = []
    for entry, line in zip(entries, label_lines):
        toks = line.split()
        if toks[0] != entry["uid"]:
            raise InvalidInput(f"{name}: label line for {toks[0]} out of order")
        start = entry["frame_offset"] * d
        feats = raw[start : start + entry["num_frames"] * d].reshape(entry["num_frames"], d).astype(np.float64)
        utts.append(Utterance(entry["uid"], feats, tuple(int(t) for t in toks[1:]), entry["domain"], entry["split"]))
    return Dataset(manifest["name"], int(manifest["num_labels"]), d, utts)


def save_pipeline(datasets: dict[str, Dataset], directory) -> None:
    directory = Path(directory)
    for ds in datasets.values():
        save_dataset(ds, directory)
    (directory / "domains.json").write_text(json.dumps({"order": list(datasets)}) + "\n")


def load_pipeline(directory) -> dict[str, Dataset]:
    directory = Path(directory)
    index = directory / "domains.json"
    if not index.exists():
        raise FileNotFoundError(str(index))
    order = json.loads(index.read_text())["order"]
    return {name: load_dataset(directory, name) for name in order}


def label_marginals(datasets: Sequence[Dataset] | Dataset, num_labels: int) -> np.ndarray:
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    counts = np.zeros(num_labels)
    for ds in datasets:
        for u in ds.utterances:
            counts += np.bincount(np.asarray(u.labels, dtype=int), minlength=num_labels)
    return counts / counts.sum()
