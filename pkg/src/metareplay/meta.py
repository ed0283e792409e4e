"""Task generation and self-supervised meta-pre-training.

Tasks pair a support and a query set of K windows each. The first M_dom
tasks per epoch are domain-specific (both sets drawn from one uniformly
chosen source domain); the rest mix windows from the whole pool and act
as synthetic domains. One meta epoch adapts a copy of the parameters on
each task's support set (a few SGD steps on the pretext loss), measures
the pretext loss of the adapted copy on the query set, and applies the
summed first-order query gradients to the shared parameters.

rng discipline (documented because the oracle tests re-derive it): every
function splits its generator with spawn() in a fixed order, so two
training loops given equal seeds consume identical augmentation streams.
meta_epoch draws, per task in order, one stream for the query evaluation
and then, only when inner_steps > 0, one stream for the inner loop. A
zero-step inner loop therefore consumes exactly one stream per task,
the same as one mini-batch of ordinary pre-training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, DomainId, Window
from .optim import AdamState, adam_step, sgd_step
from .params import ParamVector, grad_of
from .pretext import PretextObjective, eval_ssl, min_batch


class MetaError(ValueError):
    """Unsatisfiable task generation or bad hyperparameters."""


@dataclass(frozen=True)
class MetaTask:
    support: tuple[Window, ...]
    query: tuple[Window, ...]
    pure_domain: Optional[DomainId] = None
    support_idx: Optional[np.ndarray] = None     # provenance into the source dataset
    query_idx: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "query", tuple(self.query))
        if len(self.support) != len(self.query):
            raise MetaError(f"|support|={len(self.support)} != |query|={len(self.query)}")
        if self.pure_domain is not None:
            doms = {w.domain.id for w in self.support + self.query if w.domain}
            if doms != {self.pure_domain.id}:
                raise MetaError(f"pure task mixes domains {sorted(doms)}")

    @property
    def k(self) -> int:
        return len(self.support)

    def support_values(self) -> np.ndarray:
        return np.stack([w.values for w in self.support])

    def query_values(self) -> np.ndarray:
        return np.stack([w.values for w in self.query])


@dataclass(frozen=True)
class MetaHyper:
    """Alg.-style knobs: M tasks per epoch of which M_dom are domain-pure,
    task size K per set, inner lr alpha, outer lr beta."""
    M: int = 12
    M_dom: int = 8
    K: int = 16
    alpha: float = 5e-3
    beta: float = 1e-3
    inner_steps: int = 1
    epochs: int = 200
    outer: str = "adam"
    val_tasks: int = 4

    def __post_init__(self):
        if not 0 <= self.M_dom <= self.M or self.M < 1:
            raise MetaError(f"need 0 <= M_dom <= M with M >= 1, got M={self.M}, "
                            f"M_dom={self.M_dom}")
        if self.alpha <= 0 or self.beta <= 0:
            raise MetaError(f"learning rates must be > 0, got alpha={self.alpha}, "
                            f"beta={self.beta}")
        if self.K < 1 or self.inner_steps < 0 or self.epochs < 0:
            raise MetaError("K >= 1, inner_steps >= 0, epochs >= 0 required")
        if self.outer not in ("adam", "sgd"):
            raise MetaError(f"outer optimizer must be adam or sgd, got {self.outer!r}")

    @property
    def multi_task_fraction(self) -> float:
        return (self.M - self.M_dom) / self.M


TaskSource = Callable[[Dataset, np.ndarray, MetaHyper, np.random.Generator],
                      list[MetaTask]]


def _take(ds: Dataset, idx: np.ndarray) -> tuple[Window, ...]:
    return tuple(ds.window(int(i)) for i in idx)


def generate_tasks(ds: Dataset, pool: np.ndarray, hyper: MetaHyper,
                   rng: np.random.Generator) -> list[MetaTask]:
    """Sample M tasks from the pretraining pool (index array into ds).

    Domain-pure tasks draw support and query without replacement (hence
    disjoint) from one domain holding at least 2K pool windows; mixed
    tasks draw 2K windows from the whole pool the same way.
    """
    pool = np.asarray(pool, dtype=np.int64)
    k2 = 2 * hyper.K
    if pool.size < k2:
        raise MetaError(f"pool of {pool.size} windows cannot supply 2K={k2} per task")
    domains = ds.domains[pool]
    counts = np.bincount(domains, minlength=ds.n_domains)
    qualifying = np.flatnonzero(counts >= k2)
    if hyper.M_dom > 0 and qualifying.size == 0:
        raise MetaError(f"no source domain has 2K={k2} windows "
                        f"(largest has {int(counts.max())})")
    tasks: list[MetaTask] = []
    for j in range(hyper.M):
        if j < hyper.M_dom:
            d = int(qualifying[rng.integers(qualifying.size)])
            cand = pool[domains == d]
            pick = rng.choice(cand, size=k2, replace=False)
            pure: Optional[DomainId] = ds.domain_id(d)
        else:
            pick = rng.choice(pool, size=k2, replace=False)
            pure = None
        tasks.append(MetaTask(support=_take(ds, pick[:hyper.K]),
                              query=_take(ds, pick[hyper.K:]),
                              pure_domain=pure,
                              support_idx=pick[:hyper.K].copy(),
                              query_idx=pick[hyper.K:].copy()))
    return tasks


def _values(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return batch
    return np.stack([w.values if isinstance(w, Window) else np.asarray(w)
                     for w in batch])


def inner_adapt(objective: PretextObjective, params: ParamVector, support,
                alpha: float, inner_steps: int, rng: np.random.Generator,
                loss_sink: Optional[list] = None) -> ParamVector:
    """inner_steps full-batch SGD steps on the pretext loss over the
    support set; returns a fresh vector, the input is never mutated.
    Appends the per-step losses to loss_sink when given."""
    values = _values(support)
    theta = params
    for _ in range(inner_steps):
        out = eval_ssl(objective, theta, values, rng.spawn(1)[0])
        grads = grad_of(out.loss, theta)
        if loss_sink is not None:
            loss_sink.append(out.loss.item())
        theta = sgd_step(theta, grads, alpha)
    return theta


@dataclass
class EpochDiag:
    query_losses: list[float] = field(default_factory=list)
    support_losses: list[float] = field(default_factory=list)

    @property
    def mean_query_loss(self) -> float:
        return float(np.mean(self.query_losses))

    @property
    def mean_support_loss(self) -> Optional[float]:
        return float(np.mean(self.support_losses)) if self.support_losses else None


def meta_epoch(objective: PretextObjective, params: ParamVector,
               tasks: Sequence[MetaTask], hyper: MetaHyper,
               rng: np.random.Generator, opt_state: Optional[AdamState] = None
               ) -> tuple[ParamVector, EpochDiag, Optional[AdamState]]:
    """One first-order meta update.

    Per task: adapt a copy on the support set, take the gradient of the
    adapted copy's query loss, and accumulate. The summed gradient then
    drives one outer step (Adam by default, threading opt_state; plain
    SGD when hyper.outer == "sgd").
    """
    if not tasks:
        raise MetaError("meta_epoch needs at least one task")
    diag = EpochDiag()
    total: Optional[ParamVector] = None
    for task in tasks:
        r_query = rng.spawn(1)[0]
        if hyper.inner_steps > 0:
            r_inner = rng.spawn(1)[0]
            theta_i = inner_adapt(objective, params, task.support_values(),
                                  hyper.alpha, hyper.inner_steps, r_inner,
                                  loss_sink=diag.support_losses)
        else:
            theta_i = params
        out = eval_ssl(objective, theta_i, task.query_values(), r_query)
        g = grad_of(out.loss, theta_i)
        diag.query_losses.append(out.loss.item())
        total = g if total is None else total.add(g)
    if hyper.outer == "adam":
        new_params, opt_state = adam_step(params, total, opt_state, lr=hyper.beta)
    else:
        new_params = sgd_step(params, total, hyper.beta)
    return new_params, diag, opt_state


@dataclass
class TrainLog:
    """Per-epoch loss record shared by meta and plain pre-training."""
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    trajectory: list[ParamVector] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss}


def _validation_hyper(hyper: MetaHyper, n_val: int, obj_min: int) -> Optional[MetaHyper]:
    k = min(hyper.K, n_val // 2)
    if k < obj_min:
        return None
    return replace(hyper, M=max(hyper.val_tasks, 1), M_dom=0, K=k)


def meta_validation_loss(objective: PretextObjective, params: ParamVector,
                         ds: Dataset, val_pool: np.ndarray, hyper: MetaHyper,
                         rng: np.random.Generator) -> Optional[float]:
    """Mean adapted query loss over mixed tasks built from the validation
    pool; None when the pool is too small to form a task."""
    val_pool = np.asarray(val_pool, dtype=np.int64)
    vh = _validation_hyper(hyper, val_pool.size, min_batch(objective))
    if vh is None:
        return None
    tasks = generate_tasks(ds, val_pool, vh, rng)
    losses = []
    for task in tasks:
        r_query = rng.spawn(1)[0]
        if vh.inner_steps > 0:
            r_inner = rng.spawn(1)[0]
            theta_i = inner_adapt(objective, params, task.support_values(),
                                  vh.alpha, vh.inner_steps, r_inner)
        else:
            theta_i = params
        losses.append(eval_ssl(objective, theta_i, task.query_values(),
                               r_query).loss.item())
    return float(np.mean(losses))


def meta_pretrain(objective: PretextObjective, init_params: ParamVector,
                  ds: Dataset, train_pool: np.ndarray, val_pool: np.ndarray,
                  hyper: MetaHyper, rng: np.random.Generator,
                  task_source: Optional[TaskSource] = None,
                  record_trajectory: bool = False) -> tuple[ParamVector, TrainLog]:
    """Full meta-pre-training loop.

    Each epoch: fresh tasks from the training pool, one meta_epoch, then
    the validation meta loss; the best-validation parameters are returned
    (the final ones when validation is unavailable). Streams are split
    once up front as (tasks, training, validation), so validation never
    perturbs the training trajectory. The validation generator is rebuilt
    from one fixed seed every epoch, so all epochs are scored on
    identical tasks and augmentation draws and their losses are directly
    comparable.
    """
    source = task_source or generate_tasks
    r_task, r_train, r_val = rng.spawn(3)
    val_seed = int(r_val.integers(np.iinfo(np.int64).max))
    params = init_params
    log = TrainLog()
    best = init_params
    opt_state = None
    for epoch in range(1, hyper.epochs + 1):
        tasks = source(ds, np.asarray(train_pool, dtype=np.int64), hyper, r_task)
        params, diag, opt_state = meta_epoch(objective, params, tasks, hyper, r_train,
                                             opt_state)
        val = meta_validation_loss(objective, params, ds, val_pool, hyper,
                                   np.random.default_rng(val_seed))
        log.epochs.append({"epoch": epoch,
                           "support_loss": diag.mean_support_loss,
                           "query_loss": diag.mean_query_loss,
                           "val_loss": val})
        if record_trajectory:
            log.trajectory.append(params)
        crit = val if val is not None else diag.mean_query_loss
        if crit < log.best_val_loss:
            log.best_val_loss = crit
            log.best_epoch = epoch
            best = params
    return best, log
