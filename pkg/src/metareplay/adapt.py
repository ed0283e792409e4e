"""Target-side adaptation: pretext replay followed by fine-tuning.

Replay runs a few self-supervised gradient steps on the unlabeled
fine-tuning shots (theta <- theta - lr * grad of the pretext loss on the
shot set), nudging the encoder toward the new domain before any label is
consulted. Fine-tuning then trains the classifier, either on frozen
features (linear evaluation) or jointly with the encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .models import CLF_PREFIX, ENC_PREFIX, HEAD_PREFIX, EncoderConfig, classify, \
    default_encoder_config, encode
from .optim import adam_step, sgd_step
from .params import ParamVector, grad_of
from .pretext import (PretextObjective, eval_ssl, min_batch, objective_from_config,
                      objective_kind, objective_to_config)
from .tensor import Tensor


class AdaptError(ValueError):
    """Unusable shot set or invalid adaptation settings."""


class ConfigError(ValueError):
    """Incompatible mode / pre-training / objective combination."""


@dataclass(frozen=True)
class ReplayConfig:
    steps: int = 10
    lr: float = 5e-3
    kind: Optional[str] = None       # must match the pre-training objective if set

    def __post_init__(self):
        if self.steps < 0:
            raise AdaptError(f"replay steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise AdaptError(f"replay lr must be > 0, got {self.lr}")


LINEAR = "linear"
END_TO_END = "end_to_end"


@dataclass(frozen=True)
class FinetuneConfig:
    protocol: str = LINEAR
    lr: Optional[float] = None       # None -> 0.005 linear / 0.001 end-to-end
    epochs: int = 20

    def __post_init__(self):
        if self.protocol not in (LINEAR, END_TO_END):
            raise AdaptError(f"protocol must be {LINEAR!r} or {END_TO_END!r}, "
                             f"got {self.protocol!r}")
        if self.epochs < 0:
            raise AdaptError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr is not None and self.lr <= 0:
            raise AdaptError(f"lr must be > 0, got {self.lr}")

    @property
    def effective_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.005 if self.protocol == LINEAR else 0.001


@dataclass
class ReplayLog:
    loss_before: float
    loss_after: float
    step_losses: list[float]

    def to_json_dict(self) -> dict:
        return {"loss_before": self.loss_before, "loss_after": self.loss_after,
                "step_losses": self.step_losses}


def pretext_replay(objective: PretextObjective, params: ParamVector,
                   shot_values: np.ndarray, cfg: ReplayConfig,
                   rng: np.random.Generator) -> tuple[ParamVector, ReplayLog]:
    """cfg.steps full-batch pretext gradient steps on the shot windows.

    Takes raw window values only; labels never enter. One rng stream is
    spawned per loss evaluation, in step order, plus one for the closing
    measurement.
    """
    shot_values = np.asarray(shot_values, dtype=np.float32)
    if shot_values.ndim != 3:
        raise AdaptError(f"expected shot windows [n, C, T], got {shot_values.shape}")
    if shot_values.shape[0] < min_batch(objective):
        raise AdaptError(f"{shot_values.shape[0]} shots below the objective's "
                         f"minimum batch {min_batch(objective)}")
    theta = params
    step_losses: list[float] = []
    for _ in range(cfg.steps):
        out = eval_ssl(objective, theta, shot_values, rng.spawn(1)[0])
        step_losses.append(out.loss.item())
        theta = sgd_step(theta, grad_of(out.loss, theta), cfg.lr)
    final = eval_ssl(objective, theta, shot_values, rng.spawn(1)[0]).loss.item()
    before = step_losses[0] if step_losses else final
    return theta, ReplayLog(loss_before=before, loss_after=final,
                            step_losses=step_losses)


@dataclass
class FinetuneLog:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else 0.0

    def to_json_dict(self) -> dict:
        return {"losses": self.losses, "accuracies": self.accuracies}


def _trainable_prefixes(protocol: str) -> tuple[str, ...]:
    if protocol == LINEAR:
        return (CLF_PREFIX,)
    return (ENC_PREFIX, CLF_PREFIX)        # pretext head stays frozen either way


def finetune(params: ParamVector, shot_values: np.ndarray, shot_labels: np.ndarray,
             cfg: FinetuneConfig, rng: np.random.Generator,
             enc_cfg: Optional[EncoderConfig] = None
             ) -> tuple[ParamVector, FinetuneLog]:
    """Train the classification head on the labeled shots with full-batch
    Adam and cross-entropy.

    Linear evaluation freezes everything but "clf." (frozen tensors are
    the same objects before and after); end-to-end also trains the
    encoder. The classifier restarts from zero weights, so epochs=0
    yields uniform logits. rng is accepted for interface symmetry; the
    procedure itself is deterministic.
    """
    del rng
    enc_cfg = enc_cfg or default_encoder_config()
    shot_values = np.asarray(shot_values, dtype=np.float32)
    shot_labels = np.asarray(shot_labels, dtype=np.int64)
    n_classes = params["clf.b"].size
    counts = np.bincount(shot_labels[shot_labels >= 0], minlength=n_classes)
    if shot_labels.size == 0 or np.any(counts == 0):
        empty = [int(c) for c in np.flatnonzero(counts == 0)] if shot_labels.size else "all"
        raise AdaptError(f"every class needs at least one labeled shot; empty: {empty}")

    bundle = params.map(lambda n, a: np.zeros_like(a) if n.startswith(CLF_PREFIX) else a)
    prefixes = _trainable_prefixes(cfg.protocol)
    log = FinetuneLog()
    opt_state = None
    frozen_embedding = None
    if cfg.protocol == LINEAR:
        frozen_embedding = Tensor(encode(bundle, shot_values, enc_cfg).data)

    for _ in range(cfg.epochs):
        emb = frozen_embedding if frozen_embedding is not None \
            else encode(bundle, shot_values, enc_cfg)
        logits = classify(bundle, emb)
        loss = T.cross_entropy_with_logits(logits, shot_labels)
        trainable = bundle.select(lambda n: n.startswith(prefixes))
        grads = grad_of(loss, trainable)
        stepped, opt_state = adam_step(trainable, grads, opt_state, lr=cfg.effective_lr)
        bundle = bundle.merge_overrides(stepped)
        log.losses.append(loss.item())
        log.accuracies.append(float((logits.data.argmax(axis=1) == shot_labels).mean()))
    return bundle, log


# ---------------------------------------------------------------------------
# persisted pre-trained models and the four ablation pipelines

PLAIN = "plain"
META = "meta"
MODES = ("baseline", "replay_only", "meta_only", "full")
_MODE_NEEDS = {"baseline": PLAIN, "replay_only": PLAIN, "meta_only": META, "full": META}
_MODE_REPLAYS = {"baseline": False, "replay_only": True, "meta_only": False, "full": True}


@dataclass(frozen=True)
class PretrainedModel:
    params: ParamVector
    method: str                      # "plain" or "meta"
    objective: PretextObjective
    enc_cfg: EncoderConfig
    n_classes: int

    def __post_init__(self):
        if self.method not in (PLAIN, META):
            raise ConfigError(f"method must be {PLAIN!r} or {META!r}, got {self.method!r}")


def save_pretrained(model: PretrainedModel, path) -> None:
    """ParamVector file plus a JSON sidecar (path + '.json') describing
    how it was trained, so adaptation can rebuild the objective."""
    model.params.save(path)
    meta = {"method": model.method,
            "pretext": objective_to_config(model.objective),
            "encoder": {"blocks": [list(b) for b in model.enc_cfg.blocks],
                        "embedding_dim": model.enc_cfg.embedding_dim},
            "n_classes": model.n_classes}
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=1)


def load_pretrained(path) -> PretrainedModel:
    params = ParamVector.load(path)
    try:
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing model sidecar {path}.json") from None
    enc = meta.get("encoder", {})
    cfg = EncoderConfig(blocks=tuple(tuple(b) for b in enc["blocks"]),
                        embedding_dim=int(enc["embedding_dim"])) if enc \
        else default_encoder_config()
    return PretrainedModel(params=params, method=meta["method"],
                           objective=objective_from_config(meta["pretext"]),
                           enc_cfg=cfg, n_classes=int(meta.get("n_classes", 0)))


@dataclass
class PipelineLog:
    mode: str
    replay: Optional[ReplayLog]
    finetune: FinetuneLog
    protocol: str

    def to_json_dict(self) -> dict:
        return {"mode": self.mode, "protocol": self.protocol,
                "replay": self.replay.to_json_dict() if self.replay else None,
                "finetune": self.finetune.to_json_dict()}


def run_pipeline(mode: str, pretrained: PretrainedModel, ds, split,
                 replay_cfg: ReplayConfig, finetune_cfg: FinetuneConfig,
                 rng: np.random.Generator) -> tuple[ParamVector, PipelineLog]:
    """One ablation arm on one split.

    baseline: plain pre-training, fine-tune only. replay_only: plain
    pre-training + replay. meta_only: meta pre-training, fine-tune only.
    full: meta pre-training + replay, always linear evaluation. The mode
    must match how the model was pre-trained.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if _MODE_NEEDS[mode] != pretrained.method:
        raise ConfigError(f"mode {mode!r} expects {_MODE_NEEDS[mode]}-pretrained "
                          f"parameters, got {pretrained.method!r}")
    if replay_cfg.kind is not None and replay_cfg.kind != objective_kind(pretrained.objective):
        raise ConfigError(f"replay objective {replay_cfg.kind!r} does not match "
                          f"pre-training objective {objective_kind(pretrained.objective)!r}")
    if mode == "full" and finetune_cfg.protocol != LINEAR:
        # the full pipeline always runs linear evaluation (at the matching lr)
        finetune_cfg = FinetuneConfig(protocol=LINEAR, lr=None, epochs=finetune_cfg.epochs)
    shots = split.finetune_shots
    shot_values = ds.values[shots]
    params = pretrained.params
    replay_log = None
    if _MODE_REPLAYS[mode]:
        params, replay_log = pretext_replay(pretrained.objective, params, shot_values,
                                            replay_cfg, rng.spawn(1)[0])
    bundle, ft_log = finetune(params, shot_values, ds.labels[shots], finetune_cfg,
                              rng.spawn(1)[0], pretrained.enc_cfg)
    return bundle, PipelineLog(mode=mode, replay=replay_log, finetune=ft_log,
                               protocol=finetune_cfg.protocol)
