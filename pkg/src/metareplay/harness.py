"""Experiment orchestration.

Owns the plan file format, plain (non-meta) pre-training, the
leave-one-domain-out sweep over shots x seeds x pipeline modes, the
in-domain vs out-of-domain shift study, and embedding dumps.

Plan files are JSON with exactly the sections data, pretext, meta,
replay, finetune, sweep; unknown sections or keys are errors. Every
derived rng stream is keyed by the plan's master seed plus the cell
coordinates, so re-running a plan reproduces its results exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adapt import (ConfigError, FinetuneConfig, PretrainedModel, ReplayConfig,
                    _MODE_NEEDS, MODES, META, PLAIN, run_pipeline)
from .data import (Dataset, DataError, DomainRecipe, SynthSpec, compute_norm_stats,
                   apply_norm, default_synth_spec, exclude_small_domains, make_split,
                   pool_split, read_csv_dataset, read_dataset, stratified_shot_split)
from .meta import MetaHyper, TrainLog, meta_pretrain
from .metrics import aggregate, evaluate
from .models import EncoderConfig, default_encoder_config, encode
from .optim import adam_step
from .params import ParamVector, grad_of
from .pretext import (PretextObjective, eval_ssl, init_for_objective, min_batch,
                      objective_from_config, objective_to_config)


class PlanError(ValueError):
    """Malformed experiment plan."""


# ---------------------------------------------------------------------------
# deterministic stream derivation

def _token_int(token) -> int:
    if isinstance(token, str):
        return int.from_bytes(hashlib.blake2s(token.encode(), digest_size=4).digest(),
                              "little")
    return int(token)


def seed_seq(master: int, *tokens) -> np.random.SeedSequence:
    """SeedSequence keyed by the master seed and a coordinate path, so every
    sweep cell owns an independent, reproducible stream."""
    return np.random.SeedSequence([int(master)] + [_token_int(t) for t in tokens])


def rng_for(master: int, *tokens) -> np.random.Generator:
    return np.random.default_rng(seed_seq(master, *tokens))


# ---------------------------------------------------------------------------
# plan parsing

_SECTIONS = ("data", "pretext", "meta", "replay", "finetune", "sweep")

_DATA_KEYS = {"path", "synth", "min_count"}
_SYNTH_KEYS = {"n_domains", "n_classes", "samples_per_class", "timesteps", "seed",
               "recipes"}
_META_KEYS = {"M", "M_dom", "K", "alpha", "beta", "inner_steps", "epochs", "outer",
              "val_tasks", "multi_task_fraction"}
_REPLAY_KEYS = {"steps", "lr", "kind"}
_FINETUNE_KEYS = {"protocol", "lr", "epochs"}
_SWEEP_KEYS = {"modes", "shots", "seeds", "seed", "plain_epochs", "plain_batch",
               "plain_lr", "plain_weight_decay", "study_kinds", "study_shots",
               "preset"}

PRESETS = {
    "desk_scale": {},               # the defaults below are the desk scale
    "paper_scale": {"data": {"min_count": 500},
                    "meta": {"epochs": 5000, "K": 128},
                    "sweep": {"plain_epochs": 100, "plain_batch": 128}},
}


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise PlanError(f"unknown keys in {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class PretrainHyper:
    """Plain mini-batch SSL pre-training knobs."""
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or \
                self.weight_decay < 0:
            raise PlanError(f"bad pretraining hyperparameters: {self}")


@dataclass(frozen=True)
class ExperimentPlan:
    raw: dict
    data_path: Optional[str]
    synth_spec: Optional[SynthSpec]
    synth_seed: int
    min_count: int
    objective: PretextObjective
    enc_cfg: EncoderConfig
    meta_hyper: MetaHyper
    replay_cfg: ReplayConfig
    finetune_cfg: FinetuneConfig
    modes: tuple[str, ...]
    shots: tuple[int, ...]
    n_seeds: int
    master_seed: int
    plain_hyper: PretrainHyper
    study_kinds: tuple[str, ...]
    study_shots: int

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    out.update(extra)
    return out


def load_plan(source) -> ExperimentPlan:
    """Parse a plan from a JSON file path or an equivalent dict."""
    if isinstance(source, dict):
        raw = source
    else:
        with open(source) as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise PlanError("plan must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise PlanError(f"unknown plan sections: {sorted(unknown)}")

    sweep_in = dict(raw.get("sweep", {}))
    _check_keys("sweep", sweep_in, _SWEEP_KEYS)
    preset_name = sweep_in.pop("preset", None)
    preset = {}
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise PlanError(f"unknown preset {preset_name!r}; "
                            f"have {sorted(PRESETS)}")
        preset = PRESETS[preset_name]

    data = _merge(preset.get("data", {}), dict(raw.get("data", {})))
    _check_keys("data", data, _DATA_KEYS)
    data_path = data.get("path")
    min_count = int(data.get("min_count", 50))
    synth_cfg = data.get("synth")
    synth_spec = None
    synth_seed = 0
    if data_path is None and synth_cfg is None:
        synth_cfg = {}
    if synth_cfg is not None:
        if data_path is not None:
            raise PlanError("give either data.path or data.synth, not both")
        synth_cfg = dict(synth_cfg)
        _check_keys("data.synth", synth_cfg, _SYNTH_KEYS)
        synth_seed = int(synth_cfg.get("seed", 0))
        n_domains = int(synth_cfg.get("n_domains", 4))
        n_classes = int(synth_cfg.get("n_classes", 4))
        spc = int(synth_cfg.get("samples_per_class", 60))
        timesteps = int(synth_cfg.get("timesteps", 256))
        recipes = synth_cfg.get("recipes")
        if recipes is None:
            domains = default_synth_spec(n_domains, n_classes, spc).domains
        else:
            domains = tuple(DomainRecipe(**r) for r in recipes)
        synth_spec = SynthSpec(domains=domains, n_classes=n_classes,
                               samples_per_class=spc, timesteps=timesteps)

    pretext = _merge(preset.get("pretext", {}), dict(raw.get("pretext", {})))
    enc_raw = pretext.pop("encoder", None)
    if enc_raw is not None:
        enc_raw = dict(enc_raw)
        _check_keys("pretext.encoder", enc_raw, {"blocks", "embedding_dim"})
        enc_cfg = EncoderConfig(blocks=tuple(tuple(b) for b in enc_raw["blocks"]),
                                embedding_dim=int(enc_raw["embedding_dim"]))
    else:
        enc_cfg = default_encoder_config()
    objective = objective_from_config(pretext)

    meta_in = _merge(preset.get("meta", {}), dict(raw.get("meta", {})))
    _check_keys("meta", meta_in, _META_KEYS)
    meta_in.pop("multi_task_fraction", None)      # informational; recomputed
    meta_hyper = MetaHyper(**meta_in)

    replay_in = _merge(preset.get("replay", {}), dict(raw.get("replay", {})))
    _check_keys("replay", replay_in, _REPLAY_KEYS)
    if "lr" not in replay_in or replay_in["lr"] is None:
        replay_in["lr"] = meta_hyper.alpha       # replay reuses the inner rate
    replay_cfg = ReplayConfig(**replay_in)

    ft_in = _merge(preset.get("finetune", {}), dict(raw.get("finetune", {})))
    _check_keys("finetune", ft_in, _FINETUNE_KEYS)
    finetune_cfg = FinetuneConfig(**ft_in)

    sweep = _merge(preset.get("sweep", {}), sweep_in)
    modes = tuple(sweep.get("modes", list(MODES)))
    for m in modes:
        if m not in MODES:
            raise PlanError(f"unknown mode {m!r}; expected subset of {MODES}")
    if not modes:
        raise PlanError("sweep.modes must be non-empty")
    shots = tuple(int(s) for s in sweep.get("shots", (1, 2, 5, 10)))
    if not shots or any(s < 1 for s in shots):
        raise PlanError(f"sweep.shots must be positive and non-empty, got {shots}")
    n_seeds = int(sweep.get("seeds", 5))
    if n_seeds < 1:
        raise PlanError(f"sweep.seeds must be >= 1, got {n_seeds}")
    plain_hyper = PretrainHyper(epochs=int(sweep.get("plain_epochs", 30)),
                                batch_size=int(sweep.get("plain_batch", 64)),
                                lr=float(sweep.get("plain_lr", 1e-3)),
                                weight_decay=float(sweep.get("plain_weight_decay", 0.0)))
    study_kinds = tuple(sweep.get("study_kinds", ("simclr", "cpc", "multitask")))
    study_shots = int(sweep.get("study_shots", 5))

    normalized = {
        "data": {"path": data_path,
                 "synth": None if synth_spec is None else
                 {"n_domains": len(synth_spec.domains),
                  "n_classes": synth_spec.n_classes,
                  "samples_per_class": synth_spec.samples_per_class,
                  "timesteps": synth_spec.timesteps,
                  "seed": synth_seed,
                  "recipes": [vars(r) for r in synth_spec.domains]},
                 "min_count": min_count},
        "pretext": {**objective_to_config(objective),
                    "encoder": {"blocks": [list(b) for b in enc_cfg.blocks],
                                "embedding_dim": enc_cfg.embedding_dim}},
        "meta": {"M": meta_hyper.M, "M_dom": meta_hyper.M_dom, "K": meta_hyper.K,
                 "alpha": meta_hyper.alpha, "beta": meta_hyper.beta,
                 "inner_steps": meta_hyper.inner_steps, "epochs": meta_hyper.epochs,
                 "outer": meta_hyper.outer, "val_tasks": meta_hyper.val_tasks,
                 "multi_task_fraction": meta_hyper.multi_task_fraction},
        "replay": {"steps": replay_cfg.steps, "lr": replay_cfg.lr,
                   "kind": replay_cfg.kind},
        "finetune": {"protocol": finetune_cfg.protocol, "lr": finetune_cfg.lr,
                     "epochs": finetune_cfg.epochs},
        "sweep": {"modes": list(modes), "shots": list(shots), "seeds": n_seeds,
                  "seed": int(sweep.get("seed", 0)),
                  "plain_epochs": plain_hyper.epochs,
                  "plain_batch": plain_hyper.batch_size,
                  "plain_lr": plain_hyper.lr,
                  "plain_weight_decay": plain_hyper.weight_decay,
                  "study_kinds": list(study_kinds),
                  "study_shots": study_shots},
    }
    return ExperimentPlan(raw=normalized, data_path=data_path, synth_spec=synth_spec,
                          synth_seed=synth_seed, min_count=min_count,
                          objective=objective, enc_cfg=enc_cfg,
                          meta_hyper=meta_hyper, replay_cfg=replay_cfg,
                          finetune_cfg=finetune_cfg, modes=modes, shots=shots,
                          n_seeds=n_seeds, master_seed=int(sweep.get("seed", 0)),
                          plain_hyper=plain_hyper, study_kinds=study_kinds,
                          study_shots=study_shots)


def load_plan_dataset(plan: ExperimentPlan) -> Dataset:
    """Materialize the plan's dataset and drop under-sized domains."""
    if plan.data_path is not None:
        p = str(plan.data_path)
        ds = read_csv_dataset(p) if p.endswith(".csv") else read_dataset(p)
    else:
        from .data import synth_generate
        ds = synth_generate(plan.synth_spec, plan.synth_seed)
    if plan.min_count > 0:
        ds = exclude_small_domains(ds, plan.min_count)
    return ds


# ---------------------------------------------------------------------------
# plain pre-training

def epoch_order(pool, rng: np.random.Generator) -> np.ndarray:
    """The shuffled window order for one epoch; factored out so oracle
    tests can mirror the exact stream consumption."""
    return rng.permutation(np.asarray(pool, dtype=np.int64))


def plain_pretrain(objective: PretextObjective, init_params: ParamVector,
                   ds: Dataset, train_pool, val_pool, hyper: PretrainHyper,
                   rng: np.random.Generator,
                   enc_cfg: Optional[EncoderConfig] = None,
                   record_trajectory: bool = False) -> tuple[ParamVector, TrainLog]:
    """Ordinary mini-batch SSL training with Adam, checkpointed on
    validation loss.

    Streams split once as (batch order, training, validation). Each
    batch consumes one child of the training stream, exactly as one task
    does in a meta epoch, which is what makes the zero-inner-step
    equivalence hold batch for batch. Trailing batches smaller than the
    objective's minimum are skipped. The validation generator is rebuilt
    from one fixed seed every epoch so checkpoint selection compares
    epochs on the same batch and augmentation draws.
    """
    enc_cfg = enc_cfg or default_encoder_config()
    r_order, r_train, r_val = rng.spawn(3)
    val_seed = int(r_val.integers(np.iinfo(np.int64).max))
    params = init_params
    log = TrainLog()
    best = init_params
    opt_state = None
    val_pool = np.asarray(val_pool, dtype=np.int64)
    for epoch in range(1, hyper.epochs + 1):
        perm = epoch_order(train_pool, r_order)
        batch_losses = []
        for start in range(0, perm.size, hyper.batch_size):
            batch = perm[start:start + hyper.batch_size]
            if batch.size < min_batch(objective):
                continue
            out = eval_ssl(objective, params, ds.values[batch], r_train.spawn(1)[0],
                           enc_cfg)
            grads = grad_of(out.loss, params)
            params, opt_state = adam_step(params, grads, opt_state, lr=hyper.lr,
                                          weight_decay=hyper.weight_decay)
            batch_losses.append(out.loss.item())
        if not batch_losses:
            raise PlanError(f"training pool of {np.asarray(train_pool).size} windows "
                            f"yields no usable batch")
        val = None
        if val_pool.size >= min_batch(objective):
            rv = np.random.default_rng(val_seed)
            vbatch = epoch_order(val_pool, rv)[:hyper.batch_size]
            val = eval_ssl(objective, params, ds.values[vbatch], rv.spawn(1)[0],
                           enc_cfg).loss.item()
        log.epochs.append({"epoch": epoch,
                           "train_loss": float(np.mean(batch_losses)),
                           "val_loss": val})
        if record_trajectory:
            log.trajectory.append(params)
        crit = val if val is not None else float(np.mean(batch_losses))
        if crit < log.best_val_loss:
            log.best_val_loss = crit
            log.best_epoch = epoch
            best = params
    return best, log


# ---------------------------------------------------------------------------
# leave-one-domain-out sweep

@dataclass
class SweepResult:
    cells: list[dict]
    per_domain: list[dict]
    grand: dict
    config_hash: str
    plan: dict
    n_failed: int

    def to_json_dict(self) -> dict:
        return {"config_hash": self.config_hash, "plan": self.plan,
                "cells": self.cells, "per_domain": self.per_domain,
                "grand": self.grand, "n_failed": self.n_failed}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SweepResult":
        with open(path) as fh:
            d = json.load(fh)
        return cls(cells=d["cells"], per_domain=d["per_domain"], grand=d["grand"],
                   config_hash=d["config_hash"], plan=d["plan"],
                   n_failed=d["n_failed"])


def _worker_count() -> int:
    raw = os.environ.get("ADAPT2_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise PlanError(f"ADAPT2_THREADS must be an integer, got {raw!r}") from None


def pretrain_for_target(plan: ExperimentPlan, ds: Dataset, target: int,
                        method: str) -> tuple[PretrainedModel, TrainLog, Dataset]:
    """Pre-train one model ("plain" or "meta") with domain `target` held out.

    Normalization statistics come from the pretraining pool only and are
    applied to the whole dataset; the normalized dataset is returned so
    the adaptation stage sees the same scaling the model was trained on.
    """
    ref = make_split(ds, target, k=1, seed=seed_of(plan, "split", target))
    stats = compute_norm_stats(ds.values[ref.pretrain_train])
    dsn = apply_norm(ds, stats)
    rng = rng_for(plan.master_seed, "pretrain", target, method)
    init = init_for_objective(plan.objective, plan.enc_cfg, ds.n_classes,
                              rng.spawn(1)[0])
    if method == META:
        params, log = meta_pretrain(plan.objective, init, dsn, ref.pretrain_train,
                                    ref.pretrain_val, plan.meta_hyper, rng.spawn(1)[0])
    else:
        params, log = plain_pretrain(plan.objective, init, dsn, ref.pretrain_train,
                                     ref.pretrain_val, plan.plain_hyper,
                                     rng.spawn(1)[0], plan.enc_cfg)
    model = PretrainedModel(params=params, method=method, objective=plan.objective,
                            enc_cfg=plan.enc_cfg, n_classes=ds.n_classes)
    return model, log, dsn


def seed_of(plan: ExperimentPlan, *tokens) -> int:
    return int(seed_seq(plan.master_seed, *tokens).generate_state(1)[0])


def _run_cell(plan: ExperimentPlan, dsn: Dataset, ds: Dataset,
              pretrained: dict[str, PretrainedModel], d: int, k: int, seed_i: int,
              mode: str) -> dict:
    cell = {"domain": d, "domain_tag": ds.domain_tags[d], "shots": k,
            "seed": seed_i, "mode": mode, "report": None, "replay": None,
            "finetune": None, "error": None}
    try:
        split = make_split(ds, d, k, seed_of(plan, "cell", d, k, seed_i))
        rng = rng_for(plan.master_seed, "run", d, k, seed_i, mode)
        bundle, plog = run_pipeline(mode, pretrained[_MODE_NEEDS[mode]], dsn, split,
                                    plan.replay_cfg, plan.finetune_cfg, rng)
        report = evaluate(bundle, dsn.values[split.target_test],
                          dsn.labels[split.target_test], ds.n_classes, seed_i,
                          plan.config_hash, plan.enc_cfg)
        cell["report"] = report.to_json_dict()
        cell["replay"] = plog.replay.to_json_dict() if plog.replay else None
        cell["finetune"] = plog.finetune.to_json_dict()
    except Exception as e:                       # noqa: BLE001 - cell isolation
        cell["error"] = f"{type(e).__name__}: {e}"
    return cell


def leave_one_domain_out(plan: ExperimentPlan,
                         out_dir: Optional[str] = None) -> SweepResult:
    """The main experiment: rotate every domain into the target position,
    pre-train on the rest, adapt and fine-tune per (shots, seed, mode),
    and report macro-F1 averaged over seeds within a domain and then over
    domains. A failing cell is recorded with its error and the sweep
    continues."""
    ds = load_plan_dataset(plan)
    if ds.n_domains < 2:
        raise PlanError(f"leave-one-domain-out needs >= 2 domains, "
                        f"have {ds.n_domains}")
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        (out_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out_path / "logs").mkdir(parents=True, exist_ok=True)
    methods = sorted({_MODE_NEEDS[m] for m in plan.modes})
    workers = _worker_count()
    cells: list[dict] = []
    for d in range(ds.n_domains):
        pretrained: dict[str, PretrainedModel] = {}
        dsn = None
        for method in methods:
            model, log, dsn = pretrain_for_target(plan, ds, d, method)
            pretrained[method] = model
            if out_path:
                from .adapt import save_pretrained
                save_pretrained(model, out_path / "checkpoints" / f"{method}_d{d}.adp2")
                with open(out_path / "logs" / f"pretrain_{method}_d{d}.json", "w") as fh:
                    json.dump(log.to_json_dict(), fh, indent=1)
        coords = [(k, s, m) for k in plan.shots for s in range(plan.n_seeds)
                  for m in plan.modes]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_run_cell, plan, dsn, ds, pretrained, d, k, s, m)
                        for (k, s, m) in coords]
                domain_cells = [f.result() for f in futs]
        else:
            domain_cells = [_run_cell(plan, dsn, ds, pretrained, d, k, s, m)
                            for (k, s, m) in coords]
        cells.extend(domain_cells)
        if out_path:
            for cell in domain_cells:
                name = f"cell_d{cell['domain']}_k{cell['shots']}" \
                       f"_s{cell['seed']}_{cell['mode']}.json"
                with open(out_path / "logs" / name, "w") as fh:
                    json.dump(cell, fh, indent=1)

    per_domain, grand = summarize_cells(cells, plan, ds.n_domains)
    n_failed = sum(1 for c in cells if c["error"] is not None)
    result = SweepResult(cells=cells, per_domain=per_domain, grand=grand,
                         config_hash=plan.config_hash, plan=plan.raw,
                         n_failed=n_failed)
    if out_path:
        result.save(out_path / "results.json")
    return result


def summarize_cells(cells: list[dict], plan: ExperimentPlan,
                    n_domains: int) -> tuple[list[dict], dict]:
    """Seed means per (mode, shots, domain), then domain means per
    (mode, shots); grand averages are means of per-domain means."""
    per_domain = []
    grand: dict = {}
    for mode in plan.modes:
        grand[mode] = {}
        for k in plan.shots:
            domain_means = []
            for d in range(n_domains):
                vals = [c["report"]["macro_f1"] for c in cells
                        if c["mode"] == mode and c["shots"] == k
                        and c["domain"] == d and c["report"] is not None]
                if not vals:
                    continue
                mean, std = aggregate(vals)
                accs = [c["report"]["accuracy"] for c in cells
                        if c["mode"] == mode and c["shots"] == k
                        and c["domain"] == d and c["report"] is not None]
                per_domain.append({"mode": mode, "shots": k, "domain": d,
                                   "macro_f1_mean": mean, "macro_f1_std": std,
                                   "accuracy_mean": aggregate(accs)[0],
                                   "n_seeds": len(vals)})
                domain_means.append(mean)
            if domain_means:
                gmean, gstd = aggregate(domain_means)
                grand[mode][str(k)] = {"macro_f1_mean": gmean, "macro_f1_std": gstd,
                                       "n_domains": len(domain_means)}
            else:
                grand[mode][str(k)] = {"macro_f1_mean": None, "macro_f1_std": None,
                                       "n_domains": 0}
    return per_domain, grand


# ---------------------------------------------------------------------------
# in-domain vs out-of-domain study

def domain_shift_study(plan: ExperimentPlan,
                       out_dir: Optional[str] = None) -> dict:
    """For every pretext kind and domain, pre-train once on the domain's
    own pool (in-domain) and once on an equal-size sample of the other
    domains (out-of-domain), fine-tune both identically on the same shot
    sets, and report the F1 drop in percentage points (positive =
    out-of-domain degradation)."""
    ds = load_plan_dataset(plan)
    if ds.n_domains < 2:
        raise PlanError("shift study needs >= 2 domains")
    k = plan.study_shots
    results: dict = {"config_hash": plan.config_hash, "kinds": {}}
    for kind in plan.study_kinds:
        objective = objective_from_config({"kind": kind})
        per_domain = []
        for d in range(ds.n_domains):
            idx_d = ds.domain_indices(d)
            r_split = rng_for(plan.master_seed, "study-split", d)
            in_train, in_val, in_rest = pool_split(idx_d, r_split)
            if in_train.size < min_batch(objective):
                raise PlanError(f"domain {d} too small for in-domain pretraining "
                                f"({in_train.size} windows)")
            non_d = np.flatnonzero(ds.domains != d)
            need = in_train.size + in_val.size
            if non_d.size < need:
                raise PlanError(f"cannot equalize pretraining size for domain {d}: "
                                f"need {need} non-target windows, have {non_d.size}")
            perm = rng_for(plan.master_seed, "study-outpool", d).permutation(non_d)
            out_train = np.sort(perm[:in_train.size])
            out_val = np.sort(perm[in_train.size:need])

            init = init_for_objective(objective, plan.enc_cfg, ds.n_classes,
                                      rng_for(plan.master_seed, "study-init", kind, d))
            arms = {}
            for arm, (tr, va) in (("in_domain", (in_train, in_val)),
                                  ("out_of_domain", (out_train, out_val))):
                stats = compute_norm_stats(ds.values[tr])
                dsn = apply_norm(ds, stats)
                params, _log = plain_pretrain(
                    objective, init, dsn, tr, va, plan.plain_hyper,
                    rng_for(plan.master_seed, "study-pretrain", kind, d, arm),
                    plan.enc_cfg)
                seed_f1 = []
                for s in range(plan.n_seeds):
                    shots, _val, test = stratified_shot_split(
                        ds, in_rest, k, rng_for(plan.master_seed, "study-shots", d, s),
                        f"domain {d} study remainder")
                    from .adapt import finetune
                    bundle, _ft = finetune(params, dsn.values[shots], ds.labels[shots],
                                           plan.finetune_cfg,
                                           rng_for(plan.master_seed, "study-ft",
                                                   kind, d, arm, s), plan.enc_cfg)
                    rep = evaluate(bundle, dsn.values[test], dsn.labels[test],
                                   ds.n_classes, s, plan.config_hash, plan.enc_cfg)
                    seed_f1.append(rep.macro_f1)
                arms[arm] = aggregate(seed_f1)[0]
            per_domain.append({"domain": d, "domain_tag": ds.domain_tags[d],
                               "pretrain_size": int(in_train.size),
                               "in_domain_f1": arms["in_domain"],
                               "out_of_domain_f1": arms["out_of_domain"],
                               "drop_pp": 100.0 * (arms["in_domain"]
                                                   - arms["out_of_domain"])})
        in_mean = float(np.mean([r["in_domain_f1"] for r in per_domain]))
        out_mean = float(np.mean([r["out_of_domain_f1"] for r in per_domain]))
        results["kinds"][kind] = {"per_domain": per_domain,
                                  "in_domain_f1_mean": in_mean,
                                  "out_of_domain_f1_mean": out_mean,
                                  "drop_pp": 100.0 * (in_mean - out_mean)}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "study.json", "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
    return results


# ---------------------------------------------------------------------------
# embedding dumps

def dump_embeddings(params: ParamVector, ds: Dataset, path,
                    indices=None, enc_cfg: Optional[EncoderConfig] = None,
                    batch: int = 256) -> None:
    """CSV with header domain,label,e0..e{dim-1}, one row per window in
    the given order (all windows by default)."""
    enc_cfg = enc_cfg or default_encoder_config()
    idx = np.arange(ds.n_windows) if indices is None \
        else np.asarray(indices, dtype=np.int64)
    dim = enc_cfg.embedding_dim
    with open(path, "w") as fh:
        fh.write("domain,label," + ",".join(f"e{i}" for i in range(dim)) + "\n")
        for start in range(0, idx.size, batch):
            chunk = idx[start:start + batch]
            emb = encode(params, ds.values[chunk], enc_cfg).data
            for row, i in enumerate(chunk):
                vals = ",".join(repr(float(v)) for v in emb[row])
                fh.write(f"{int(ds.domains[i])},{int(ds.labels[i])},{vals}\n")
