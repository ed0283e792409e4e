"""Windowed multi-domain sensor datasets.

Covers windowing of raw series, per-channel normalization, domain
bookkeeping, deterministic leave-one-domain-out splits with stratified
few-shot sampling, a synthetic multi-domain generator, and the binary /
CSV dataset formats.

A Dataset is immutable after construction: values [N, C, T] float32,
labels [N] (-1 = unlabeled), domains [N] with dense ids 0..D-1.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

DATASET_MAGIC = b"ADS1"
DATASET_VERSION = 1


class DataError(ValueError):
    """Malformed dataset, impossible split, or bad generator spec."""


@dataclass(frozen=True)
class DomainId:
    id: int
    tag: str


@dataclass(frozen=True)
class Window:
    """One fixed-length multi-channel window."""
    values: np.ndarray                      # [channels, timesteps] float32
    label: Optional[int] = None
    domain: Optional[DomainId] = None


@dataclass(frozen=True)
class NormStats:
    """Per-channel affine map y = (x - mid) * scale; scale 0 for constant channels."""
    mid: np.ndarray
    scale: np.ndarray


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray                      # [N, C, T] float32
    labels: np.ndarray                      # [N] int16, -1 = unlabeled
    domains: np.ndarray                     # [N] uint16
    domain_tags: tuple[str, ...]
    n_classes: int
    norm: Optional[NormStats] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise DataError(f"values must be [N,C,T], got shape {v.shape}")
        n = v.shape[0]
        labels = np.asarray(self.labels, dtype=np.int16)
        domains = np.asarray(self.domains, dtype=np.uint16)
        if labels.shape != (n,) or domains.shape != (n,):
            raise DataError("labels/domains length does not match number of windows")
        if not np.all(np.isfinite(v)):
            raise DataError("dataset contains NaN or Inf values")
        if n and domains.size and domains.max(initial=0) >= len(self.domain_tags):
            raise DataError("domain id outside tag table")
        if n and labels.max(initial=-1) >= self.n_classes:
            raise DataError(f"label exceeds n_classes={self.n_classes}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "domains", domains)
        object.__setattr__(self, "domain_tags", tuple(self.domain_tags))

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def timesteps(self) -> int:
        return self.values.shape[2]

    @property
    def n_domains(self) -> int:
        return len(self.domain_tags)

    def domain_id(self, d: int) -> DomainId:
        return DomainId(d, self.domain_tags[d])

    def window(self, i: int) -> Window:
        d = int(self.domains[i])
        lab = int(self.labels[i])
        return Window(values=self.values[i],
                      label=None if lab < 0 else lab,
                      domain=DomainId(d, self.domain_tags[d]))

    def domain_indices(self, d: int) -> np.ndarray:
        return np.flatnonzero(self.domains == d)

    def class_counts(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        labs = self.labels if indices is None else self.labels[indices]
        labs = labs[labs >= 0]
        return np.bincount(labs, minlength=self.n_classes)


@dataclass(frozen=True)
class SplitPlan:
    """Index sets for one leave-one-domain-out experiment."""
    pretrain_train: np.ndarray
    pretrain_val: np.ndarray
    finetune_shots: np.ndarray
    target_val: np.ndarray
    target_test: np.ndarray
    target_domain: DomainId
    seed: int

    def __post_init__(self):
        for name in ("pretrain_train", "pretrain_val", "finetune_shots",
                     "target_val", "target_test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        sets = self.index_sets()
        total = np.concatenate(list(sets.values()))
        if len(np.unique(total)) != len(total):
            raise DataError("split index sets overlap")

    def index_sets(self) -> dict[str, np.ndarray]:
        return {"pretrain_train": self.pretrain_train,
                "pretrain_val": self.pretrain_val,
                "finetune_shots": self.finetune_shots,
                "target_val": self.target_val,
                "target_test": self.target_test}

    def validate_against(self, ds: Dataset) -> None:
        for name, idx in self.index_sets().items():
            if idx.size and (idx.min() < 0 or idx.max() >= ds.n_windows):
                raise DataError(f"{name} references windows outside the dataset")
        t = self.target_domain.id
        for name in ("pretrain_train", "pretrain_val"):
            idx = getattr(self, name)
            if idx.size and np.any(ds.domains[idx] == t):
                raise DataError(f"{name} contains windows of the held-out domain {t}")
        for name in ("finetune_shots", "target_val", "target_test"):
            idx = getattr(self, name)
            if idx.size and np.any(ds.domains[idx] != t):
                raise DataError(f"{name} contains windows outside the held-out domain {t}")

    def to_json_dict(self) -> dict:
        d = {name: idx.tolist() for name, idx in self.index_sets().items()}
        d["target_domain"] = {"id": self.target_domain.id, "tag": self.target_domain.tag}
        d["seed"] = int(self.seed)
        return d

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SplitPlan":
        td = d["target_domain"]
        return cls(pretrain_train=d["pretrain_train"], pretrain_val=d["pretrain_val"],
                   finetune_shots=d["finetune_shots"], target_val=d["target_val"],
                   target_test=d["target_test"],
                   target_domain=DomainId(int(td["id"]), str(td["tag"])),
                   seed=int(d["seed"]))

    @classmethod
    def load_json(cls, path) -> "SplitPlan":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# windowing and normalization

def windowize(series: np.ndarray, window: int = 256, overlap: int = 128,
              label: Optional[int] = None, domain: Optional[DomainId] = None
              ) -> list[Window]:
    """Slice a [C, T] series into overlapping windows in temporal order.

    The trailing remainder shorter than ``window`` is dropped.
    """
    series = np.asarray(series, dtype=np.float32)
    if series.ndim != 2:
        raise DataError(f"series must be [channels, T], got shape {series.shape}")
    t = series.shape[1]
    if t < window:
        raise DataError(f"series length {t} is shorter than window size {window}")
    if not 0 <= overlap < window:
        raise DataError(f"overlap {overlap} must be in [0, window)")
    step = window - overlap
    count = (t - window) // step + 1
    return [Window(values=series[:, i * step:i * step + window].copy(),
                   label=label, domain=domain)
            for i in range(count)]


def dataset_from_windows(windows: Sequence[Window], domain_tags: Sequence[str],
                         n_classes: int) -> Dataset:
    if not windows:
        raise DataError("no windows given")
    values = np.stack([w.values for w in windows]).astype(np.float32)
    labels = np.array([-1 if w.label is None else w.label for w in windows], dtype=np.int16)
    domains = np.array([0 if w.domain is None else w.domain.id for w in windows],
                       dtype=np.uint16)
    return Dataset(values, labels, domains, tuple(domain_tags), n_classes)


def compute_norm_stats(values: np.ndarray) -> NormStats:
    """Per-channel affine coefficients mapping min -> -1, max -> +1."""
    if values.size == 0:
        raise DataError("cannot compute normalization statistics of an empty pool")
    if not np.all(np.isfinite(values)):
        raise DataError("normalization input contains NaN or Inf")
    lo = values.min(axis=(0, 2))
    hi = values.max(axis=(0, 2))
    mid = (hi + lo) / 2.0
    span = hi - lo
    scale = np.where(span > 0, 2.0 / np.where(span > 0, span, 1.0), 0.0)
    return NormStats(mid=mid.astype(np.float32), scale=scale.astype(np.float32))


def apply_norm(ds: Dataset, stats: NormStats, clip: bool = True) -> Dataset:
    v = (ds.values - stats.mid[None, :, None]) * stats.scale[None, :, None]
    if clip:
        v = np.clip(v, -1.0, 1.0)
    return replace(ds, values=v.astype(np.float32), norm=stats)


def normalize(ds: Dataset) -> Dataset:
    """Normalize with statistics from the whole dataset; idempotent.

    For leave-one-domain-out runs compute the statistics on the
    pretraining pool only (compute_norm_stats on that slice) and reuse
    them for the held-out domain via apply_norm.
    """
    if ds.n_windows == 0:
        raise DataError("cannot normalize an empty dataset")
    return apply_norm(ds, compute_norm_stats(ds.values))


def exclude_small_domains(ds: Dataset, min_count: int = 500) -> Dataset:
    """Drop domains with fewer than min_count windows and re-index densely."""
    counts = np.bincount(ds.domains, minlength=ds.n_domains)
    keep = np.flatnonzero(counts >= min_count)
    if keep.size == 0:
        raise DataError(f"all {ds.n_domains} domains have fewer than {min_count} windows")
    if keep.size == ds.n_domains:
        return ds
    remap = np.full(ds.n_domains, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    mask = remap[ds.domains] >= 0
    return Dataset(values=ds.values[mask],
                   labels=ds.labels[mask],
                   domains=remap[ds.domains[mask]].astype(np.uint16),
                   domain_tags=tuple(ds.domain_tags[d] for d in keep),
                   n_classes=ds.n_classes,
                   norm=ds.norm)


# ---------------------------------------------------------------------------
# splits

def pool_split(indices: np.ndarray, rng: np.random.Generator,
               pool_frac: float = 0.7, train_frac: float = 0.9
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """70% of the given windows form the pretraining pool, split 90/10
    into train/val; the remaining 30% is returned as the third array."""
    perm = rng.permutation(indices)
    n_pool = int(pool_frac * len(indices))
    pool = perm[:n_pool]
    n_tr = int(train_frac * n_pool)
    return np.sort(pool[:n_tr]), np.sort(pool[n_tr:]), np.sort(perm[n_pool:])


def stratified_shot_split(ds: Dataset, candidates: np.ndarray, k: int,
                          rng: np.random.Generator, what: str
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified k shots per class; remainder 50/50 into val/test."""
    labs = ds.labels[candidates]
    classes = np.unique(labs[labs >= 0])
    if classes.size == 0:
        raise DataError(f"no labeled windows in {what}")
    shots = []
    for c in classes:
        idx_c = candidates[labs == c]
        if len(idx_c) < k:
            raise DataError(f"class {int(c)} has {len(idx_c)} windows in {what}, "
                            f"need {k} shots")
        shots.append(rng.choice(idx_c, size=k, replace=False))
    shots = np.sort(np.concatenate(shots))
    rest = np.setdiff1d(candidates, shots)
    if len(rest) < 2:
        raise DataError(f"only {len(rest)} windows left in {what} for val/test, need >= 2")
    perm = rng.permutation(rest)
    n_val = len(rest) // 2
    return shots, np.sort(perm[:n_val]), np.sort(perm[n_val:])


def make_split(ds: Dataset, target: int | DomainId, k: int, seed: int) -> SplitPlan:
    """Leave-one-domain-out split: non-target windows feed pretraining
    (70% pool, then 90/10 train/val); the target domain contributes k
    stratified shots per class and a 50/50 val/test remainder."""
    t = target.id if isinstance(target, DomainId) else int(target)
    if not 0 <= t < ds.n_domains:
        raise DataError(f"target domain {t} not in dataset (D={ds.n_domains})")
    if k < 1:
        raise DataError(f"shots k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    non_target = np.flatnonzero(ds.domains != t)
    if non_target.size == 0:
        raise DataError("no non-target windows to pretrain on")
    pretrain_train, pretrain_val, _rest = pool_split(non_target, rng)
    tgt = np.flatnonzero(ds.domains == t)
    if tgt.size == 0:
        raise DataError(f"held-out domain {t} has no windows")
    shots, target_val, target_test = stratified_shot_split(ds, tgt, k, rng,
                                                           f"target domain {t}")
    return SplitPlan(pretrain_train=pretrain_train, pretrain_val=pretrain_val,
                     finetune_shots=shots, target_val=target_val,
                     target_test=target_test, target_domain=ds.domain_id(t),
                     seed=int(seed))


# ---------------------------------------------------------------------------
# synthetic multi-domain generator

@dataclass(frozen=True)
class DomainRecipe:
    """Per-domain transform: rotate about a channel axis, then a global gain
    and per-channel gains (sensor miscalibration), noise, and a phase offset
    folded into the class sinusoids."""
    rotation_deg: float = 0.0
    rotation_axis: int = 2
    gain: float = 1.0
    channel_gains: tuple = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channel_gains",
                           tuple(float(g) for g in self.channel_gains))
        if self.rotation_axis not in (0, 1, 2):
            raise DataError(f"rotation_axis must be 0..2, got {self.rotation_axis}")
        if self.gain <= 0:
            raise DataError(f"gain must be positive, got {self.gain}")
        if len(self.channel_gains) != 3 or any(g <= 0 for g in self.channel_gains):
            raise DataError(f"channel_gains must be 3 positive factors, "
                            f"got {self.channel_gains}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class SynthSpec:
    domains: tuple[DomainRecipe, ...]
    n_classes: int = 4
    samples_per_class: int = 60
    channels: int = 3
    timesteps: int = 256

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if not self.domains:
            raise DataError("need at least one domain recipe")
        if self.n_classes < 1 or self.samples_per_class < 1:
            raise DataError("n_classes and samples_per_class must be >= 1")
        if self.channels != 3:
            raise DataError("generator produces 3-channel windows only")
        if self.timesteps < 8:
            raise DataError(f"timesteps {self.timesteps} too short")


def _axis_rotation(axis: int, deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    r = np.eye(3, dtype=np.float64)
    r[i, i] = c
    r[j, j] = c
    r[i, j] = -s
    r[j, i] = s
    return r


def _class_directions(c: int, n_classes: int, da1: float = 0.0,
                      da2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors in channel space per class, both on cones about the
    third channel axis. Classes live at distinct azimuths, so a domain
    rotation about that axis slides every class along the class circle and
    toward its neighbours - the geometric source of the cross-domain
    confusion this generator is meant to produce. da1/da2 wobble the
    azimuths per draw."""
    a1 = 2.0 * np.pi * c / n_classes + 0.4 + da1
    a2 = 2.0 * np.pi * c / n_classes + 1.9 + da2
    u1 = np.array([np.cos(a1), np.sin(a1), 0.45])
    u2 = np.array([np.cos(a2), np.sin(a2), -0.35])
    return u1 / np.linalg.norm(u1), u2 / np.linalg.norm(u2)


def _class_signal(spec: SynthSpec, c: int, phase: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One draw of class c's template: two sinusoids at mildly class-specific
    frequencies, each oscillating along a class-specific channel direction,
    under a slow envelope carrying no class information. Frequency spacing
    between adjacent classes is comparable to the per-draw jitter, so
    orientation rather than frequency carries most of the class identity."""
    t = np.linspace(0.0, 2.0 * np.pi, spec.timesteps, endpoint=False)
    da1, da2 = 0.3 * rng.standard_normal(2)
    u1, u2 = _class_directions(c, spec.n_classes, da1, da2)
    f1 = 4.0 + 0.15 * c
    f2 = 7.5 + 0.2 * c
    p1, p2, pe = rng.uniform(0.0, 2.0 * np.pi, size=3)
    j1, j2 = 1.0 + 0.08 * rng.standard_normal(2)
    amp = 1.0 + 0.3 * rng.standard_normal()
    x = (u1[:, None] * np.sin(f1 * j1 * t[None, :] + p1 + phase)
         + 0.8 * u2[:, None] * np.sin(f2 * j2 * t[None, :] + p2 + phase))
    env = 0.7 + 0.3 * np.sin(t + pe)
    return amp * x * env[None, :]


def synth_generate(spec: SynthSpec, seed: int) -> Dataset:
    """Balanced multi-domain dataset where every domain shares the class
    templates but sees them rotated, scaled, phase-shifted, and noised.

    Sample-level randomness is keyed by (seed, class, sample) so that two
    domains with identity recipes contain identical windows.
    """
    n_dom = len(spec.domains)
    total = n_dom * spec.n_classes * spec.samples_per_class
    values = np.empty((total, 3, spec.timesteps), dtype=np.float32)
    labels = np.empty(total, dtype=np.int16)
    domains = np.empty(total, dtype=np.uint16)
    i = 0
    for d, recipe in enumerate(spec.domains):
        rot = _axis_rotation(recipe.rotation_axis, recipe.rotation_deg)
        cg = np.asarray(recipe.channel_gains, dtype=np.float64)[:, None]
        for c in range(spec.n_classes):
            for s in range(spec.samples_per_class):
                rng_s = np.random.default_rng([seed, c, s])
                x = _class_signal(spec, c, recipe.phase, rng_s)
                x = recipe.gain * cg * (rot @ x)
                if recipe.noise_sigma > 0:
                    rng_n = np.random.default_rng([seed, 7919, d, c, s])
                    x = x + recipe.noise_sigma * rng_n.standard_normal(x.shape)
                values[i] = x.astype(np.float32)
                labels[i] = c
                domains[i] = d
                i += 1
    tags = tuple(f"synth{d}" for d in range(n_dom))
    return Dataset(values, labels, domains, tags, spec.n_classes)


def default_synth_spec(n_domains: int = 4, n_classes: int = 4,
                       samples_per_class: int = 60) -> SynthSpec:
    """Four-domain recipe with orientation, gain, noise, and phase shift
    growing with the domain index. Rotations step by 55 degrees about the
    class-circle axis, deliberately wider than the 30-degree augmentation
    range, so a held-out domain sits outside the orientation span the
    encoder was trained to absorb and its classes slide toward the
    neighbouring class of the pre-training domains."""
    recipes = tuple(
        DomainRecipe(rotation_deg=65.0 * d,
                     rotation_axis=2,
                     gain=1.0 + 0.18 * ((d % 3) - 1),
                     noise_sigma=0.25 + 0.05 * d,
                     phase=0.9 * d)
        for d in range(n_domains))
    return SynthSpec(domains=recipes, n_classes=n_classes,
                     samples_per_class=samples_per_class)


# ---------------------------------------------------------------------------
# on-disk formats

def write_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HIHHHH", DATASET_VERSION, ds.n_windows, ds.channels,
                             ds.timesteps, ds.n_domains, ds.n_classes))
        per = np.empty(ds.n_windows, dtype=[("label", "<i2"), ("domain", "<u2"),
                                            ("values", "<f4", (ds.channels, ds.timesteps))])
        per["label"] = ds.labels
        per["domain"] = ds.domains
        per["values"] = ds.values
        fh.write(per.tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise DataError(f"bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}")
    try:
        version, n, c, t, n_dom, n_cls = struct.unpack_from("<HIHHHH", blob, 4)
    except struct.error:
        raise DataError("truncated dataset header") from None
    if version != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {version}")
    rec = np.dtype([("label", "<i2"), ("domain", "<u2"), ("values", "<f4", (c, t))])
    header = 4 + struct.calcsize("<HIHHHH")
    expected = header + n * rec.itemsize
    if len(blob) != expected:
        raise DataError(f"dataset payload is {len(blob)} bytes, expected {expected}")
    per = np.frombuffer(blob, dtype=rec, count=n, offset=header)
    tags = tuple(f"domain{d}" for d in range(n_dom))
    return Dataset(values=per["values"].copy(), labels=per["label"].copy(),
                   domains=per["domain"].copy(), domain_tags=tags, n_classes=n_cls)


def write_csv_dataset(ds: Dataset, path) -> None:
    header = ["domain", "label"] + [f"c{c}t{t}" for c in range(ds.channels)
                                    for t in range(ds.timesteps)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        flat = ds.values.reshape(ds.n_windows, -1)
        for i in range(ds.n_windows):
            w.writerow([int(ds.domains[i]), int(ds.labels[i])]
                       + [repr(float(v)) for v in flat[i]])


def read_csv_dataset(path) -> Dataset:
    """Tiny-fixture import: columns domain,label,c0t0,... one window per row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["domain", "label"]:
        raise DataError("CSV must start with header domain,label,c0t0,...")
    header = rows[0]
    n_val = len(header) - 2
    chans = {h[1:].split("t")[0] for h in header[2:]}
    c = len(chans)
    if n_val % max(c, 1) != 0:
        raise DataError("CSV value columns do not factor into channels x timesteps")
    t = n_val // c
    if header[2:] != [f"c{cc}t{tt}" for cc in range(c) for tt in range(t)]:
        raise DataError("CSV value columns must be c0t0..c0t{T-1},c1t0,... in order")
    doms, labs, vals = [], [], []
    for r in rows[1:]:
        if not r:
            continue
        if len(r) != len(header):
            raise DataError(f"CSV row has {len(r)} columns, expected {len(header)}")
        doms.append(int(r[0]))
        labs.append(int(r[1]))
        vals.append(np.array(r[2:], dtype=np.float32).reshape(c, t))
    if not vals:
        raise DataError("CSV contains no data rows")
    domains = np.array(doms, dtype=np.uint16)
    labels = np.array(labs, dtype=np.int16)
    n_dom = int(domains.max()) + 1
    n_cls = int(labels.max()) + 1 if labels.max() >= 0 else 0
    return Dataset(values=np.stack(vals), labels=labels, domains=domains,
                   domain_tags=tuple(f"domain{d}" for d in range(n_dom)),
                   n_classes=n_cls)
