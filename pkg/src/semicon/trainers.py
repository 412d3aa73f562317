"""Training strategies over one shared stream/memory/eval harness.

Seven methods act on the same single-pass stream. The contrastive group
(ours, scr, scr-mo) trains encoder + projection head on a multiview
batch; the cross-entropy group (er, er-mo, finetune, offline) trains
encoder + linear head on raw features. Per-iteration order follows the
online protocol strictly: retrieve memory, SGD step, then offer the
stream batch to the reservoir, so a batch can never replay itself.

Label accounting: the -mo methods and ours obtain labels only through
reservoir insertion (budgeted, p = oracle calls / N). scr, er, finetune
and offline are supervised reference points: they read stream labels
directly and report p = 1.0.

Method-specific evaluation: contrastive methods and er/er-mo are scored
by NCM over memory latents after each task; er/er-mo additionally
report their native linear-head accuracy; finetune and offline have no
memory, so their accuracy matrix is head-based.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from math import ceil
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses
from .errors import ConfigError
from .evaluation import AccuracyMatrix, evaluate, head_accuracy
from .memory import MemoryBuffer, reservoir_update_batch, retrieve
from .models import (
    ConvSpec,
    Encoder,
    MlpSpec,
    ProjectionHead,
    bind,
    init_params,
)
from .reports import RunReport
from .stream import AugmentationSpec, Sample, TaskStream, make_multiview

METHODS = ("ours", "scr", "scr-mo", "er", "er-mo", "finetune", "offline")
CONTRASTIVE_METHODS = ("ours", "scr", "scr-mo")
MEMORY_METHODS = ("ours", "scr", "scr-mo", "er", "er-mo")
SUPERVISED_METHODS = ("scr", "er", "finetune", "offline")


@dataclass(frozen=True)
class TrainConfig:
    """Method choice plus hyperparameters; method-specific fields are
    filled with their defaults when left None and rejected when set on a
    method they do not apply to."""

    method: str
    alpha: float | None = None
    tau: float | None = None
    galpha_on: str | None = None
    stream_batch: int = 10
    mem_batch: int | None = None
    mem_size: int | None = None
    learning_rate: float = 0.1
    seed: int = 0
    epochs: int | None = None
    augmentation: AugmentationSpec | None = None
    loss_trace: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        set_default = lambda name, value: object.__setattr__(self, name, value)

        if self.method == "ours":
            if self.alpha is None:
                set_default("alpha", 1.0)
            if self.galpha_on is None:
                set_default("galpha_on", "unlabeled")
        else:
            if self.alpha is not None:
                raise ConfigError(f"alpha does not apply to {self.method}")
            if self.galpha_on is not None:
                raise ConfigError(f"galpha_on does not apply to {self.method}")

        if self.method in CONTRASTIVE_METHODS:
            if self.tau is None:
                set_default("tau", 0.07)
        elif self.tau is not None:
            raise ConfigError(f"tau does not apply to {self.method}")

        if self.method in MEMORY_METHODS:
            if self.mem_size is None:
                set_default("mem_size", 200)
            if self.mem_batch is None:
                set_default("mem_batch", 100)
            if self.mem_size < 1 or self.mem_batch < 1:
                raise ConfigError("memory sizes must be >= 1")
        else:
            if self.mem_size is not None or self.mem_batch is not None:
                raise ConfigError(f"{self.method} does not use a memory")

        if self.method == "offline":
            if self.epochs is None:
                set_default("epochs", 50)
            if self.epochs < 1:
                raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        elif self.epochs is not None:
            raise ConfigError(f"epochs only applies to offline, got {self.method}")

        if self.stream_batch < 1:
            raise ConfigError(f"stream batch must be >= 1, got {self.stream_batch}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        # validate loss hyperparameters eagerly
        if self.method in CONTRASTIVE_METHODS:
            losses.LossConfig(
                tau=self.tau,
                alpha=self.alpha if self.alpha is not None else 1.0,
                galpha_on=self.galpha_on or "unlabeled",
            )


def _spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent streams per concern, all derived from one seed."""
    names = ("init", "augment", "reservoir", "retrieval", "shuffle")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _init_seed(rngs: dict) -> int:
    return int(rngs["init"].integers(0, 2**63 - 1))


def _default_augmentation(model: MlpSpec | ConvSpec) -> AugmentationSpec:
    kind = "image" if isinstance(model, ConvSpec) else "vector"
    return AugmentationSpec(kind=kind)


class _Harness:
    """Shared plumbing: parameter updates, step/loss accounting, eval."""

    def __init__(self, cfg: TrainConfig, stream: TaskStream):
        if cfg.stream_batch != stream.batch_size:
            raise ConfigError(
                f"config stream_batch {cfg.stream_batch} != "
                f"stream batch size {stream.batch_size}"
            )
        self.cfg = cfg
        self.stream = stream
        self.sgd = ad.SgdConfig(learning_rate=cfg.learning_rate)
        self.matrix = AccuracyMatrix()
        self.steps = 0
        self.trace: list[float] = []
        self.missing: list[int] = []

    def step(self, params: dict[str, np.ndarray],
             forward: Callable[[dict[str, ad.Var], ad.Tape], ad.Var]) -> float:
        """One SGD step on `params` through a traced forward computation."""
        tape = ad.Tape()
        bound = bind(tape, params)
        loss = forward(bound, tape)
        grads = ad.grads_for(ad.backward(loss), [bound[n] for n in sorted(params)])
        ad.sgd_step([params[n] for n in sorted(params)], grads, self.sgd)
        return self._count(float(loss.data))

    def _count(self, loss: float) -> float:
        self.steps += 1
        if self.cfg.loss_trace:
            self.trace.append(loss)
        return loss

    def skip_step(self) -> float:
        """Counted step with nothing to train on (empty batch)."""
        return self._count(0.0)

    def report(self, *, oracle_calls: int, label_fraction: float,
               head_row: list[float] | None, started: float) -> RunReport:
        return RunReport(
            config=asdict(self.cfg),
            accuracy=self.matrix.rows,
            final_avg=self.matrix.final_avg,
            oracle_calls=oracle_calls,
            label_fraction=label_fraction,
            steps=self.steps,
            missing_classes=self.missing,
            head_accuracy=head_row,
            loss_trace=self.trace if self.cfg.loss_trace else None,
            wall_clock=time.perf_counter() - started,
        )


def _require_memory(cfg: TrainConfig, memory: MemoryBuffer) -> MemoryBuffer:
    if memory is None:
        raise ConfigError(f"{cfg.method} needs a memory buffer")
    if memory.capacity != cfg.mem_size:
        raise ConfigError(
            f"memory capacity {memory.capacity} != config mem_size {cfg.mem_size}"
        )
    return memory


def _head_init(rngs: dict, latent_dim: int, n_classes: int) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(latent_dim)
    return {
        "head/w": rngs["init"].uniform(-bound, bound, (latent_dim, n_classes)),
        "head/b": np.zeros((1, n_classes)),
    }


def _contrastive_forward(enc: Encoder, proj: ProjectionHead, views: np.ndarray,
                         idx, loss_cfg: losses.LossConfig,
                         supervised_only: bool):
    mask = losses.build_masks(idx)
    prepared = enc.prepare(views)

    def forward(bound, tape):
        z = proj.apply(bound, enc.apply(bound, tape.const(prepared)))
        if supervised_only:
            return losses.loss_mem(z, idx, mask, loss_cfg)
        return losses.semicon(z, idx, mask, loss_cfg)

    return forward


def _ce_forward(enc: Encoder, feats: np.ndarray, labels: np.ndarray):
    prepared = enc.prepare(feats)

    def forward(bound, tape):
        h = enc.apply(bound, tape.const(prepared))
        logits = ad.add(ad.matmul(h, bound["head/w"]), bound["head/b"])
        return losses.cross_entropy(logits, labels)

    return forward


def _stream_labels(stream: TaskStream, batch: list[Sample]) -> list[int]:
    """Direct label lookup for the supervised baselines (uncharged)."""
    return [stream.oracle.label(s.source_id) for s in batch]


# ---------------------------------------------------------------------------
# contrastive trainers
# ---------------------------------------------------------------------------

def _train_contrastive(cfg: TrainConfig, stream: TaskStream,
                       memory: MemoryBuffer, model: MlpSpec | ConvSpec):
    started = time.perf_counter()
    memory = _require_memory(cfg, memory)
    rngs = _spawn_rngs(cfg.seed)
    enc, proj = init_params(_init_seed(rngs), model)
    aug = cfg.augmentation or _default_augmentation(model)
    loss_cfg = losses.LossConfig(
        tau=cfg.tau,
        alpha=cfg.alpha if cfg.alpha is not None else 1.0,
        galpha_on=cfg.galpha_on or "unlabeled",
    )
    params = {**enc.params, **proj.params}
    harness = _Harness(cfg, stream)
    supervised_only = cfg.method in ("scr", "scr-mo")

    for _task, batches in stream.iter_tasks():
        for b_s in batches:
            b_m = retrieve(memory, cfg.mem_batch, rngs["retrieval"])
            sources: list[tuple[Sample, int | None]] = [
                (it.sample, it.label) for it in b_m
            ]
            if cfg.method == "ours":
                sources += [(s, None) for s in b_s]
            elif cfg.method == "scr":
                sources += list(zip(b_s, _stream_labels(stream, b_s)))
            # scr-mo trains on memory only
            if sources:
                views, idx = make_multiview(sources, aug, rngs["augment"])
                harness.step(
                    params,
                    _contrastive_forward(enc, proj, views, idx, loss_cfg,
                                         supervised_only),
                )
            else:
                harness.skip_step()
            reservoir_update_batch(memory, b_s, stream.oracle, rngs["reservoir"])
        row, missing = evaluate(enc, memory, stream.test_sets)
        harness.matrix.add_row(row)
        harness.missing = missing

    n = stream.n_samples
    supervised = cfg.method in SUPERVISED_METHODS
    report = harness.report(
        oracle_calls=n if supervised else memory.oracle_calls,
        label_fraction=1.0 if supervised else memory.oracle_calls / n,
        head_row=None,
        started=started,
    )
    return enc, memory, report


def train_ours(cfg, stream, memory, model):
    if cfg.method != "ours":
        raise ConfigError(f"train_ours got method {cfg.method!r}")
    return _train_contrastive(cfg, stream, memory, model)


def train_scr(cfg, stream, memory, model):
    if cfg.method != "scr":
        raise ConfigError(f"train_scr got method {cfg.method!r}")
    return _train_contrastive(cfg, stream, memory, model)


def train_scr_mo(cfg, stream, memory, model):
    if cfg.method != "scr-mo":
        raise ConfigError(f"train_scr_mo got method {cfg.method!r}")
    return _train_contrastive(cfg, stream, memory, model)


# ---------------------------------------------------------------------------
# cross-entropy trainers
# ---------------------------------------------------------------------------

def _n_classes(stream: TaskStream) -> int:
    return int(stream.oracle.labels.max()) + 1


def _train_replay_ce(cfg: TrainConfig, stream: TaskStream,
                     memory: MemoryBuffer, model: MlpSpec | ConvSpec):
    started = time.perf_counter()
    memory = _require_memory(cfg, memory)
    rngs = _spawn_rngs(cfg.seed)
    enc, _ = init_params(_init_seed(rngs), model)
    head = _head_init(rngs, enc.out_dim, _n_classes(stream))
    params = {**enc.params, **head}
    harness = _Harness(cfg, stream)
    memory_only = cfg.method == "er-mo"

    for _task, batches in stream.iter_tasks():
        for b_s in batches:
            b_m = retrieve(memory, cfg.mem_batch, rngs["retrieval"])
            feats = [it.sample.features for it in b_m]
            labels = [it.label for it in b_m]
            if not memory_only:
                feats += [s.features for s in b_s]
                labels += _stream_labels(stream, b_s)
            if feats:
                harness.step(
                    params,
                    _ce_forward(enc, np.stack(feats), np.array(labels)),
                )
            else:
                harness.skip_step()
            reservoir_update_batch(memory, b_s, stream.oracle, rngs["reservoir"])
        row, missing = evaluate(enc, memory, stream.test_sets)
        harness.matrix.add_row(row)
        harness.missing = missing

    head_row = head_accuracy(enc, params["head/w"], params["head/b"][0],
                             stream.test_sets)
    n = stream.n_samples
    supervised = cfg.method in SUPERVISED_METHODS
    report = harness.report(
        oracle_calls=n if supervised else memory.oracle_calls,
        label_fraction=1.0 if supervised else memory.oracle_calls / n,
        head_row=head_row,
        started=started,
    )
    return enc, memory, report


def train_er(cfg, stream, memory, model):
    if cfg.method != "er":
        raise ConfigError(f"train_er got method {cfg.method!r}")
    return _train_replay_ce(cfg, stream, memory, model)


def train_er_mo(cfg, stream, memory, model):
    if cfg.method != "er-mo":
        raise ConfigError(f"train_er_mo got method {cfg.method!r}")
    return _train_replay_ce(cfg, stream, memory, model)


def train_finetune(cfg, stream, memory, model):
    """Supervised cross entropy on the raw stream; no replay, no memory."""
    if cfg.method != "finetune":
        raise ConfigError(f"train_finetune got method {cfg.method!r}")
    if memory is not None:
        raise ConfigError("finetune does not use a memory")
    started = time.perf_counter()
    rngs = _spawn_rngs(cfg.seed)
    enc, _ = init_params(_init_seed(rngs), model)
    head = _head_init(rngs, enc.out_dim, _n_classes(stream))
    params = {**enc.params, **head}
    harness = _Harness(cfg, stream)

    for _task, batches in stream.iter_tasks():
        for b_s in batches:
            feats = np.stack([s.features for s in b_s])
            labels = np.array(_stream_labels(stream, b_s))
            harness.step(params, _ce_forward(enc, feats, labels))
        harness.matrix.add_row(
            head_accuracy(enc, params["head/w"], params["head/b"][0],
                          stream.test_sets)
        )

    report = harness.report(
        oracle_calls=stream.n_samples,
        label_fraction=1.0,
        head_row=harness.matrix.rows[-1],
        started=started,
    )
    return enc, None, report


def train_offline(cfg, stream, memory, model):
    """Upper reference: multi-epoch shuffled passes over the whole dataset."""
    if cfg.method != "offline":
        raise ConfigError(f"train_offline got method {cfg.method!r}")
    if memory is not None:
        raise ConfigError("offline does not use a memory")
    started = time.perf_counter()
    rngs = _spawn_rngs(cfg.seed)
    enc, _ = init_params(_init_seed(rngs), model)
    head = _head_init(rngs, enc.out_dim, _n_classes(stream))
    params = {**enc.params, **head}
    harness = _Harness(cfg, stream)

    feats = stream.data.features
    labels = stream.oracle.labels
    n = len(labels)
    for _ in range(cfg.epochs):
        order = rngs["shuffle"].permutation(n)
        for start in range(0, n, cfg.stream_batch):
            take = order[start:start + cfg.stream_batch]
            harness.step(params, _ce_forward(enc, feats[take], labels[take]))
    harness.matrix.add_row(
        head_accuracy(enc, params["head/w"], params["head/b"][0],
                      stream.test_sets)
    )

    report = harness.report(
        oracle_calls=n,
        label_fraction=1.0,
        head_row=harness.matrix.rows[-1],
        started=started,
    )
    return enc, None, report


_TRAINERS = {
    "ours": train_ours,
    "scr": train_scr,
    "scr-mo": train_scr_mo,
    "er": train_er,
    "er-mo": train_er_mo,
    "finetune": train_finetune,
    "offline": train_offline,
}


def run(cfg: TrainConfig, stream: TaskStream,
        model: MlpSpec | ConvSpec) -> tuple[Encoder, MemoryBuffer | None, RunReport]:
    """Dispatch on cfg.method, building the memory buffer when one is needed."""
    memory = MemoryBuffer(cfg.mem_size) if cfg.method in MEMORY_METHODS else None
    return _TRAINERS[cfg.method](cfg, stream, memory, model)


def expected_steps(cfg: TrainConfig, stream: TaskStream) -> int:
    """The step-count contract: ceil(N / |B_s|) per pass."""
    per_pass = sum(
        ceil(len(t) / stream.batch_size) for t in stream.tasks
    )
    if cfg.method == "offline":
        return cfg.epochs * ceil(stream.n_samples / cfg.stream_batch)
    return per_pass
