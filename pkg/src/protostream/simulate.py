"""Desk-scale teacher-student simulator contrasting two prototype regimes.

In the *joint* regime the prototype matrix receives gradient updates from the
same cross-view consistency loss as the encoder.  In the *decoupled* regime
the prototypes are the means of a streaming Gaussian mixture fitted to the
teacher's latents, refreshed before every encoder step, and the loss gradient
never touches them.  Telemetry tracks the consistency loss, unique-prototype
counts on an epsilon grid, and nearest-class-centroid probe accuracy split by
head/medium/tail class frequency.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .collapse import count_unique, normalize_rows
from .datagen import DataSpec, Dataset, make_dataset, make_views
from .encoder import EncoderParams, backward, forward, init_encoder
from .mixture import GmmConfig, MixtureState, gmm_update, init_mixture, spread_unit_vectors

logger = logging.getLogger(__name__)

TELEMETRY_EPSILONS = (0.025, 0.05, 0.1, 0.25, 0.5)

TELEMETRY_HEADER = (
    "epoch,loss,"
    + ",".join(f"uniq_eps_{e}" for e in TELEMETRY_EPSILONS)
    + ",acc_all,acc_head,acc_med,acc_tail"
)


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass
class SimConfig:
    regime: str = "decoupled"  # "joint" or "decoupled"
    n_prototypes: int = 64
    latent_dim: int = 16
    hidden: int = 32
    tau_student: float = 0.1
    tau_teacher: float = 0.04
    ema_momentum: float = 0.99
    learning_rate: float = 0.5
    grad_clip: float = 10.0
    epochs: int = 50
    views: int = 2
    batch_size: int = 128
    view_noise: float = 0.1
    view_dropout: float = 0.1
    proto_init: str = "spread"  # "spread", "random", or "data"
    seed: int = 0
    data: DataSpec = field(default_factory=DataSpec)
    gmm: GmmConfig = field(default_factory=lambda: GmmConfig(total_steps=0))

    def __post_init__(self):
        if self.regime not in ("joint", "decoupled"):
            raise ConfigError("sim.regime", f"unknown regime {self.regime!r}")
        if self.tau_student <= 0.0 or self.tau_teacher <= 0.0:
            raise ConfigError("sim.tau_student", "temperatures must be positive")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError("sim.ema", "EMA momentum must lie in [0, 1)")
        if self.views < 2:
            raise ConfigError("sim.views", "need at least two views")
        if self.proto_init not in ("spread", "random", "data"):
            raise ConfigError("sim.proto_init", f"unknown mode {self.proto_init!r}")


@dataclass
class SimState:
    config: SimConfig
    student: EncoderParams
    teacher: EncoderParams
    prototypes: np.ndarray  # (K, D); aliases mixture.means in decoupled runs
    mixture: MixtureState | None
    step: int = 0


@dataclass
class EpochTelemetry:
    epoch: int
    loss: float
    unique_counts: dict
    acc_all: float
    acc_head: float
    acc_medium: float
    acc_tail: float


@dataclass
class ExperimentResult:
    telemetry: list
    state: SimState
    dataset: Dataset
    telemetry_path: Path | None = None
    snapshot_paths: list = field(default_factory=list)


def assign(h: np.ndarray, prototypes: np.ndarray, tau: float) -> np.ndarray:
    """Softmax prototype-assignment probabilities p = softmax(h C^T / tau)."""
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    scores = np.atleast_2d(h) @ prototypes.T / tau
    scores -= scores.max(axis=1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def consistency_loss(student_probs: np.ndarray, teacher_probs: np.ndarray,
                     tau_student: float) -> tuple[float, np.ndarray]:
    """Cross-entropy H(teacher, student) and its gradient w.r.t. student logits.

    The teacher distribution is a constant target.  For row-batched inputs the
    loss is the row mean and the gradient is (s - t) / (tau * n_rows), i.e.
    the exact gradient of the returned scalar.
    """
    s = np.atleast_2d(np.asarray(student_probs, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_probs, dtype=np.float64))
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {t.shape}")
    logs = np.log(np.maximum(s, 1e-300))
    loss = float(np.mean(-np.sum(np.where(t > 0.0, t * logs, 0.0), axis=1)))
    grad_logits = (s - t) / (tau_student * s.shape[0])
    return loss, grad_logits


def _global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def loss_and_grads(state: SimState, views: np.ndarray,
                   teacher_probs: list | None = None):
    """Cross-view consistency loss and its analytic gradients.

    Returns (loss, d_w1, d_w2, d_protos); d_protos is None outside the joint
    regime.  Teacher assignments are constant targets; they may be passed in
    precomputed, otherwise they are derived from the current teacher and
    prototypes.  The loss averages over all ordered (teacher view, student
    view) pairs with distinct views.
    """
    cfg = state.config
    protos = state.prototypes
    n_views = views.shape[0]
    if teacher_probs is None:
        teacher_probs = []
        for j in range(n_views):
            h_t, _ = forward(state.teacher, views[j])
            teacher_probs.append(assign(h_t, protos, cfg.tau_teacher))
    d_w1 = np.zeros_like(state.student.w1)
    d_w2 = np.zeros_like(state.student.w2)
    d_protos = np.zeros_like(protos) if cfg.regime == "joint" else None
    n_pairs = n_views * (n_views - 1)
    total_loss = 0.0
    for js in range(n_views):
        h_s, cache = forward(state.student, views[js])
        s_probs = assign(h_s, protos, cfg.tau_student)
        d_h = np.zeros_like(h_s)
        for jt in range(n_views):
            if jt == js:
                continue
            loss, d_logits = consistency_loss(s_probs, teacher_probs[jt],
                                              cfg.tau_student)
            total_loss += loss / n_pairs
            d_logits = d_logits / n_pairs
            d_h += d_logits @ protos
            if d_protos is not None:
                d_protos += d_logits.T @ h_s
        g1, g2 = backward(state.student, cache, d_h)
        d_w1 += g1
        d_w2 += g2
    return total_loss, d_w1, d_w2, d_protos


def student_step(state: SimState, views: np.ndarray,
                 teacher_probs: list | None = None) -> tuple[SimState, float]:
    """One gradient step on the student encoder (and prototypes when joint).

    ``views`` has shape (J, B, input_dim).  Joint-regime prototypes are
    renormalized to unit rows after the step, matching the weight-normalized
    prototype heads this regime models; without that projection a norm race
    crowns one winner per mode and the collapse dynamics stall.  In the
    decoupled regime the prototype matrix is read but never written.
    """
    cfg = state.config
    total_loss, d_w1, d_w2, d_protos = loss_and_grads(state, views, teacher_probs)
    if cfg.learning_rate == 0.0:
        return replace(state, step=state.step + 1), total_loss
    grads = [d_w1, d_w2] + ([d_protos] if d_protos is not None else [])
    norm = _global_norm(grads)
    if norm > cfg.grad_clip:
        scale = cfg.grad_clip / norm
        for g in grads:
            g *= scale
        logger.warning("step %d: gradient norm %.3f clipped to %.3f",
                       state.step, norm, cfg.grad_clip)
    lr = cfg.learning_rate
    student = EncoderParams(
        state.student.w1 - lr * d_w1,
        state.student.w2 - lr * d_w2,
        role="student",
    )
    new_protos = state.prototypes
    if d_protos is not None:
        new_protos = state.prototypes - lr * d_protos
        new_protos /= np.linalg.norm(new_protos, axis=1, keepdims=True)
    new_state = replace(state, student=student, prototypes=new_protos,
                        step=state.step + 1)
    return new_state, total_loss


def teacher_step(state: SimState) -> SimState:
    """EMA update of the teacher toward the current student."""
    m = state.config.ema_momentum
    teacher = EncoderParams(
        m * state.teacher.w1 + (1.0 - m) * state.student.w1,
        m * state.teacher.w2 + (1.0 - m) * state.student.w2,
        role="teacher",
    )
    return replace(state, teacher=teacher)


def prototype_step_decoupled(state: SimState,
                             teacher_latents: np.ndarray) -> SimState:
    """Refresh the mixture on teacher latents and expose its means as prototypes.

    Runs before the encoder step within each iteration so the student loss is
    computed against the already-updated prototypes.
    """
    if state.config.regime != "decoupled":
        raise ValueError("prototype updates via the mixture require regime=decoupled")
    mixture = gmm_update(state.mixture, teacher_latents, state.config.gmm)
    return replace(state, mixture=mixture, prototypes=mixture.means)


def _initial_prototypes(cfg: SimConfig, dataset: Dataset,
                        teacher: EncoderParams,
                        rng: np.random.Generator) -> np.ndarray:
    k, d = cfg.n_prototypes, cfg.latent_dim
    if cfg.proto_init == "spread":
        return spread_unit_vectors(k, d, rng)
    if cfg.proto_init == "random":
        return rng.standard_normal((k, d)) / np.sqrt(d)
    if dataset.x_train.shape[0] < k:
        raise ConfigError("sim.proto_init", "not enough samples for data init")
    h, _ = forward(teacher, dataset.x_train[:k])
    return h.copy()


def init_sim(cfg: SimConfig) -> tuple[SimState, Dataset]:
    """Deterministic setup: data, encoders, prototypes, and (maybe) mixture."""
    data_rng = np.random.default_rng([cfg.seed, 0])
    enc_rng = np.random.default_rng([cfg.seed, 1])
    proto_rng = np.random.default_rng([cfg.seed, 2])
    dataset = make_dataset(cfg.data, data_rng)
    student = init_encoder(cfg.data.input_dim, cfg.hidden, cfg.latent_dim,
                           enc_rng, role="student")
    teacher = student.copy(role="teacher")
    protos = _initial_prototypes(cfg, dataset, teacher, proto_rng)
    mixture = None
    if cfg.regime == "decoupled":
        steps_per_epoch = max(1, math.ceil(dataset.x_train.shape[0] / cfg.batch_size))
        gmm = cfg.gmm
        if gmm.total_steps <= 0:
            gmm = replace(gmm, total_steps=max(1, cfg.epochs * steps_per_epoch))
        gmm = replace(gmm, rng_seed=cfg.seed)
        cfg = replace(cfg, gmm=gmm)
        mixture = init_mixture(cfg.n_prototypes, cfg.latent_dim,
                               init_points=protos, config=gmm, rng=proto_rng)
        protos = mixture.means
    return SimState(cfg, student, teacher, protos, mixture), dataset


def probe_accuracy(state: SimState, dataset: Dataset) -> dict:
    """Nearest-class-centroid accuracy on frozen teacher features.

    Centroids come from training latents; accuracy is reported overall and per
    head/medium/tail bucket (nan for empty buckets).
    """
    h_train, _ = forward(state.teacher, dataset.x_train)
    h_test, _ = forward(state.teacher, dataset.x_test)
    n_classes = dataset.centers.shape[0]
    centroids = np.zeros((n_classes, h_train.shape[1]))
    for c in range(n_classes):
        members = h_train[dataset.y_train == c]
        if members.shape[0] == 0:
            continue
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        centroids[c] = mean / norm if norm > 0 else mean
    predictions = np.argmax(h_test @ centroids.T, axis=1)
    correct = predictions == dataset.y_test
    out = {"all": float(correct.mean())}
    for bucket in ("head", "medium", "tail"):
        classes = [c for c, b in dataset.buckets.items() if b == bucket]
        mask = np.isin(dataset.y_test, classes)
        out[bucket] = float(correct[mask].mean()) if mask.any() else float("nan")
    return out


def _telemetry_row(state: SimState, dataset: Dataset, epoch: int,
                   loss: float) -> EpochTelemetry:
    protos = normalize_rows(state.prototypes)
    uniq = {eps: count_unique(protos, eps).unique_count
            for eps in TELEMETRY_EPSILONS}
    acc = probe_accuracy(state, dataset)
    return EpochTelemetry(
        epoch=epoch, loss=loss, unique_counts=uniq,
        acc_all=acc["all"], acc_head=acc["head"],
        acc_medium=acc["medium"], acc_tail=acc["tail"],
    )


def write_telemetry_csv(rows: list, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(TELEMETRY_HEADER + "\n")
        for r in rows:
            cells = [str(r.epoch), format(r.loss, ".17g")]
            cells += [str(r.unique_counts[e]) for e in TELEMETRY_EPSILONS]
            cells += [format(v, ".17g") for v in
                      (r.acc_all, r.acc_head, r.acc_medium, r.acc_tail)]
            fh.write(",".join(cells) + "\n")


def _snapshot_state(state: SimState, epoch: int) -> MixtureState:
    if state.mixture is not None:
        return state.mixture
    k, d = state.prototypes.shape
    return MixtureState(
        np.full(k, 1.0 / k), state.prototypes.copy(), np.ones((k, d)),
        None, epoch,
    )


def run_experiment(config: SimConfig,
                   out_dir: str | Path | None = None) -> ExperimentResult:
    """Run the full training loop; deterministic given config.seed.

    Writes ``telemetry.csv`` and per-epoch prototype snapshots under
    ``out_dir`` when given.  Telemetry always contains the initialization row,
    so an ``epochs``-epoch run yields ``epochs + 1`` rows.
    """
    state, dataset = init_sim(config)
    config = state.config  # schedules may have been resolved during init
    snapshot_dir = None
    result = ExperimentResult(telemetry=[], state=state, dataset=dataset)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        snapshot_dir = out_dir / "snapshots"
        snapshot_dir.mkdir(exist_ok=True)
        result.telemetry_path = out_dir / "telemetry.csv"

    def log_epoch(epoch, loss):
        result.telemetry.append(_telemetry_row(state, dataset, epoch, loss))
        if snapshot_dir is not None:
            path = snapshot_dir / f"epoch_{epoch:04d}.ckpt"
            save_checkpoint(_snapshot_state(state, epoch), path)
            result.snapshot_paths.append(path)

    log_epoch(0, float("nan"))
    n_train = dataset.x_train.shape[0]
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, 3, epoch])
        order = rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, config.batch_size):
            batch = dataset.x_train[order[start:start + config.batch_size]]
            views = make_views(batch, config.views, config.view_noise,
                               config.view_dropout, rng)
            if config.regime == "decoupled":
                h_t, _ = forward(state.teacher,
                                 views.reshape(-1, views.shape[2]))
                state = prototype_step_decoupled(state, h_t)
            state, loss = student_step(state, views)
            state = teacher_step(state)
            losses.append(loss)
        log_epoch(epoch, float(np.mean(losses)) if losses else float("nan"))
    result.state = state
    if result.telemetry_path is not None:
        write_telemetry_csv(result.telemetry, result.telemetry_path)
    return result


# --- flat key-value experiment configuration -------------------------------

_SIM_KEYS = {
    "sim.regime": ("regime", str),
    "sim.prototypes": ("n_prototypes", int),
    "sim.latent_dim": ("latent_dim", int),
    "sim.hidden": ("hidden", int),
    "sim.tau_student": ("tau_student", float),
    "sim.tau_teacher": ("tau_teacher", float),
    "sim.ema": ("ema_momentum", float),
    "sim.lr": ("learning_rate", float),
    "sim.grad_clip": ("grad_clip", float),
    "sim.epochs": ("epochs", int),
    "sim.views": ("views", int),
    "sim.batch": ("batch_size", int),
    "sim.view_noise": ("view_noise", float),
    "sim.view_dropout": ("view_dropout", float),
    "sim.proto_init": ("proto_init", str),
    "sim.seed": ("seed", int),
}

_DATA_KEYS = {
    "data.mode": ("mode", str),
    "data.classes": ("n_classes", int),
    "data.input_dim": ("input_dim", int),
    "data.samples": ("n_samples", int),
    "data.spread": ("spread", float),
    "data.exponent": ("exponent", float),
    "data.head_min": ("head_min", int),
    "data.tail_max": ("tail_max", int),
    "data.test_fraction": ("test_fraction", float),
}

_GMM_KEYS = {
    "gmm.beta": ("beta", float),
    "gmm.anneal_start": ("anneal_start", float),
    "gmm.eta.start": ("eta_start", float),
    "gmm.eta.end": ("eta_end", float),
    "gmm.variance_floor": ("variance_floor", float),
    "gmm.resurrect_threshold": ("resurrect_threshold", float),
    "gmm.total_steps": ("total_steps", int),
    "gmm.init_variance": ("init_variance", float),
    "gmm.forgetting": ("responsibility_forgetting", bool),
    "gmm.annealing": ("annealing", bool),
    "gmm.resurrect": ("resurrect", bool),
    "gmm.rescaling": ("rescaling", bool),
}

KNOWN_KEYS = sorted(set(_SIM_KEYS) | set(_DATA_KEYS) | set(_GMM_KEYS))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_mapping(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blanks are skipped."""
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(stripped, f"line {lineno} is not key=value")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(key, f"unknown key on line {lineno}")
        mapping[key] = value
    return mapping


def sim_config_from_text(text: str) -> SimConfig:
    mapping = parse_config_mapping(text)

    def build(table, cls, defaults):
        kwargs = dict(defaults)
        for key, raw in mapping.items():
            if key not in table:
                continue
            name, typ = table[key]
            try:
                kwargs[name] = _parse_bool(raw) if typ is bool else typ(raw)
            except ValueError as err:
                raise ConfigError(key, str(err)) from None
        return cls(**kwargs)

    data = build(_DATA_KEYS, DataSpec, {})
    gmm = build(_GMM_KEYS, GmmConfig, {"total_steps": 0})
    sim_kwargs = {}
    for key, raw in mapping.items():
        if key not in _SIM_KEYS:
            continue
        name, typ = _SIM_KEYS[key]
        try:
            sim_kwargs[name] = typ(raw)
        except ValueError as err:
            raise ConfigError(key, str(err)) from None
    return SimConfig(data=data, gmm=gmm, **sim_kwargs)


def sim_config_to_mapping(config: SimConfig) -> dict:
    """Flat snapshot of every known key, for manifests and bit-exact diffing."""
    out = {}
    for key, (name, typ) in _SIM_KEYS.items():
        out[key] = str(getattr(config, name))
    for key, (name, typ) in _DATA_KEYS.items():
        out[key] = str(getattr(config.data, name))
    for key, (name, typ) in _GMM_KEYS.items():
        out[key] = str(getattr(config.gmm, name))
    return dict(sorted(out.items()))
