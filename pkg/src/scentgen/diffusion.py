"""Conditional denoising diffusion over atomic-number node features.

The forward process perturbs clean per-node scalars with Gaussian noise scaled
by a linear variance schedule.  The denoiser embeds the noisy features
together with a linear time embedding and a projected multi-hot descriptor
vector, runs two equivariant message-passing layers, and predicts the noise
per node plus a four-way bond-type logit per edge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import egnn, numcore
from .egnn import DEFAULT_LAYERS, NodeState
from .molgraph import BondType
from .numcore import ParamStore, Tensor


class StepOutOfRange(ValueError):
    """Timestep outside [1, T]."""


class LengthMismatch(ValueError):
    """Descriptor vector length differs from the trained vocabulary size."""


class NonPositiveTemperature(ValueError):
    """Softmax temperature must be strictly positive."""


class EmptyDataset(ValueError):
    """Training requires at least one example."""


class DivergedLoss(RuntimeError):
    """Training loss exploded past the divergence guard."""


# Class order of the four-way bond head.
BOND_CLASSES = (BondType.SINGLE, BondType.DOUBLE, BondType.TRIPLE, BondType.AROMATIC)
BOND_CLASS_INDEX = {t: k for k, t in enumerate(BOND_CLASSES)}

HIDDEN_DIM = 8  # shared width of embeddings and message-passing features


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear variance schedule beta_t = beta_max * t / T over t in [1, T]."""

    steps: int
    beta_max: float = 1.0

    def beta(self, t: int) -> float:
        return beta_at(self, t)


def beta_at(schedule: NoiseSchedule, t: int) -> float:
    if not 1 <= t <= schedule.steps:
        raise StepOutOfRange(f"t={t} outside [1, {schedule.steps}]")
    return schedule.beta_max * t / schedule.steps


def forward_noise(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Perturb clean features: x_t = x_0 + sqrt(beta_t) * eps, eps ~ N(0, I)."""
    beta = beta_at(schedule, t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return x0 + np.sqrt(beta) * eps, eps


def condition_embed(y: np.ndarray, params: ParamStore) -> Tensor:
    """Project a multi-hot descriptor vector into the conditioning space."""
    w = params["cond.w"]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != w.data.shape[0]:
        raise LengthMismatch(f"descriptor vector length {y.shape[0]} != vocabulary size {w.data.shape[0]}")
    return numcore.linear(params, "cond", Tensor(y.reshape(1, -1)))


def time_embed(t: int, steps: int, params: ParamStore) -> Tensor:
    """Affine image of the normalized timestep t / T."""
    frac = Tensor(np.array([[t / steps]], dtype=np.float64))
    return numcore.linear(params, "time", frac)


@dataclass
class DenoiserOutput:
    """Per-node noise prediction, per-edge bond logits, and the evolved state."""

    eps_hat: Tensor
    bond_logits: Tensor
    node_embeddings: Tensor
    coords: Tensor


def denoiser_forward(
    x_noisy: np.ndarray,
    coords: np.ndarray,
    bond_edges: Sequence[tuple[int, int]],
    t: int,
    schedule: NoiseSchedule,
    y: np.ndarray,
    params: ParamStore,
    fragment_ids: np.ndarray | None = None,
) -> DenoiserOutput:
    """One denoising pass over a (possibly multi-fragment) noisy graph.

    Every node sees [noisy feature, time embedding, conditioning vector];
    bond logits are read from the final node embeddings over `bond_edges`.
    Outputs are passed through nan_to_num in place.
    """
    x_noisy = np.asarray(x_noisy, dtype=np.float64).reshape(-1, 1)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = x_noisy.shape[0]
    if n == 0:
        raise ValueError("denoiser_forward requires at least one node")
    if coords.shape[0] != n:
        raise numcore.ShapeMismatch(f"{n} features vs {coords.shape[0]} coordinate rows")
    beta_at(schedule, t)

    cond_rows = numcore.repeat_rows(condition_embed(y, params), n)
    temb_rows = numcore.repeat_rows(time_embed(t, schedule.steps, params), n)
    node_input = numcore.concat([Tensor(x_noisy), temb_rows, cond_rows], axis=1)
    hidden = numcore.linear(params, "input_proj", node_input)
    state = egnn.egnn_forward(NodeState(hidden, Tensor(coords)), params, DEFAULT_LAYERS, fragment_ids)
    eps_hat = numcore.linear(params, "head", state.features)

    if bond_edges:
        idx_i = np.asarray([e[0] for e in bond_edges], dtype=np.int64)
        idx_j = np.asarray([e[1] for e in bond_edges], dtype=np.int64)
        pair_features = numcore.concat(
            [numcore.gather(state.features, idx_i), numcore.gather(state.features, idx_j)], axis=1
        )
        bond_logits = numcore.linear(params, "bond", pair_features)
    else:
        bond_logits = Tensor(np.zeros((0, len(BOND_CLASSES))))

    # Bounded nan_to_num: unchecked infinities would otherwise compound across
    # sampling steps through the coordinate pathway.
    for tensor in (eps_hat, bond_logits, state.features, state.coords):
        np.nan_to_num(tensor.data, copy=False, posinf=1e6, neginf=-1e6)
    return DenoiserOutput(eps_hat, bond_logits, state.features, state.coords)


def bond_probabilities(logits: Tensor | np.ndarray, tau: float) -> Tensor:
    """Temperature-scaled row softmax; rows sum to one."""
    if tau <= 0:
        raise NonPositiveTemperature(f"tau={tau}")
    logits = numcore.as_tensor(logits)
    if logits.data.size == 0:
        return Tensor(np.zeros_like(logits.data))
    return numcore.exp(numcore.log_softmax_rows(numcore.mul(logits, 1.0 / tau)))


def mse_loss(eps_hat: Tensor, eps: np.ndarray) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = numcore.as_tensor(eps_hat)
    if eps_hat.data.shape != eps.shape:
        raise numcore.ShapeMismatch(f"{eps_hat.data.shape} vs {eps.shape}")
    diff = numcore.sub(eps_hat, Tensor(eps))
    return numcore.mean_(numcore.mul(diff, diff))


def bond_ce_loss(bond_logits: Tensor, bond_labels: np.ndarray, tau: float) -> Tensor:
    """Mean cross-entropy of temperature-scaled bond probabilities vs labels."""
    if tau <= 0:
        raise NonPositiveTemperature(f"tau={tau}")
    labels = np.asarray(bond_labels, dtype=np.int64).reshape(-1)
    logits = numcore.as_tensor(bond_logits)
    if labels.size == 0:
        return Tensor(np.zeros(()))
    if logits.data.shape[0] != labels.size:
        raise numcore.ShapeMismatch(f"{logits.data.shape[0]} logit rows vs {labels.size} labels")
    if labels.min() < 0 or labels.max() >= logits.data.shape[1]:
        raise numcore.ShapeMismatch("bond label outside class range")
    log_probs = numcore.log_softmax_rows(numcore.mul(logits, 1.0 / tau))
    onehot = np.zeros_like(logits.data)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = numcore.sum_(numcore.mul(log_probs, onehot), axis=1)
    return numcore.mul(numcore.mean_(picked), -1.0)


def loss_total(
    eps_hat: Tensor,
    eps: np.ndarray,
    bond_logits: Tensor,
    bond_labels: np.ndarray,
    tau: float,
) -> Tensor:
    """Unweighted sum of the node-noise MSE and the bond cross-entropy."""
    return numcore.add(mse_loss(eps_hat, eps), bond_ce_loss(bond_logits, bond_labels, tau))


@dataclass(frozen=True)
class TrainingExample:
    """One molecule prepared for the loop: clean features, geometry, edges, labels."""

    features: np.ndarray       # [n, 1] atomic numbers as floats
    coords: np.ndarray         # [n, 3]
    bond_edges: tuple[tuple[int, int], ...]
    bond_labels: np.ndarray    # [E] class indices into BOND_CLASSES
    condition: np.ndarray      # [L] multi-hot descriptor vector


@dataclass
class TrainConfig:
    steps: int = 1000
    epochs: int = 1000
    batch_size: int = 32
    tau: float = 1.0
    learning_rate: float = 1e-3
    beta_max: float = 1.0
    hidden_dim: int = HIDDEN_DIM
    seed: int = 0
    divergence_factor: float = 1e3


@dataclass
class EpochMetrics:
    epoch: int
    mse: float
    ce: float
    total: float


def init_params(vocab_size: int, hidden_dim: int = HIDDEN_DIM, seed: int = 0) -> ParamStore:
    """Allocate every learned component of the denoiser."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    numcore.init_affine(params, "cond", vocab_size, hidden_dim, rng)
    numcore.init_affine(params, "time", 1, hidden_dim, rng)
    numcore.init_affine(params, "input_proj", 1 + 2 * hidden_dim, hidden_dim, rng)
    for layer in DEFAULT_LAYERS:
        egnn.init_egnn_layer(params, layer, hidden_dim, hidden_dim, rng)
    numcore.init_affine(params, "head", hidden_dim, 1, rng)
    numcore.init_affine(params, "bond", 2 * hidden_dim, len(BOND_CLASSES), rng)
    return params


def _stratified_timesteps(n: int, steps: int, rng: np.random.Generator) -> list[int]:
    """One uniform timestep per draw, stratified across [1, T] within the epoch.

    Molecule order is shuffled independently, so each molecule still sees a
    uniform t marginally; stratification only de-noises the per-epoch mean.
    """
    ts = []
    for k in range(n):
        lo = 1 + (k % n) * steps // n
        hi = max(lo, ((k % n) + 1) * steps // n)
        ts.append(int(rng.integers(lo, hi + 1)))
    return ts


def train(
    examples: Sequence[TrainingExample],
    config: TrainConfig,
    params: ParamStore | None = None,
) -> tuple[ParamStore, list[EpochMetrics]]:
    """Epoch loop: noise, denoise, MSE + CE, backprop, Adam.

    Each molecule draws a uniform timestep, stratified across the epoch.
    Aborts with DivergedLoss once a batch loss is non-finite or exceeds the
    guard factor times the first batch's loss.
    """
    examples = list(examples)
    if not examples:
        raise EmptyDataset("no training examples")
    vocab_size = examples[0].condition.shape[0]
    if params is None:
        params = init_params(vocab_size, config.hidden_dim, config.seed)
    rng = np.random.default_rng(config.seed)
    schedule = NoiseSchedule(config.steps, config.beta_max)
    metrics: list[EpochMetrics] = []
    initial_loss: float | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        timesteps = _stratified_timesteps(len(examples), config.steps, rng)
        epoch_mse = 0.0
        epoch_ce = 0.0
        count = 0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            molecule_losses = []
            for offset, idx in enumerate(batch):
                ex = examples[idx]
                t = timesteps[lo + offset]
                x_t, eps = forward_noise(ex.features, t, schedule, rng)
                out = denoiser_forward(
                    x_t, ex.coords, ex.bond_edges, t, schedule, ex.condition, params
                )
                mse = mse_loss(out.eps_hat, eps)
                ce = bond_ce_loss(out.bond_logits, ex.bond_labels, config.tau)
                molecule_losses.append(numcore.add(mse, ce))
                epoch_mse += mse.item()
                epoch_ce += ce.item()
                count += 1
            batch_loss = molecule_losses[0]
            for extra in molecule_losses[1:]:
                batch_loss = numcore.add(batch_loss, extra)
            batch_loss = numcore.mul(batch_loss, 1.0 / len(molecule_losses))
            value = batch_loss.item()
            if initial_loss is None:
                initial_loss = max(value, 1e-12)
            if not np.isfinite(value) or value > config.divergence_factor * initial_loss:
                raise DivergedLoss(
                    f"batch loss {value} exceeded {config.divergence_factor} x initial {initial_loss}"
                )
            params.zero_grad()
            numcore.backward(batch_loss)
            numcore.adam_step(params, lr=config.learning_rate)
        metrics.append(
            EpochMetrics(epoch, epoch_mse / count, epoch_ce / count, (epoch_mse + epoch_ce) / count)
        )
    return params, metrics


METRICS_COLUMNS = ("epoch", "mse_loss", "ce_loss", "total_loss")


def write_metrics_csv(metrics: Sequence[EpochMetrics], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow([m.epoch, repr(m.mse), repr(m.ce), repr(m.total)])


def read_metrics_csv(path: str) -> list[EpochMetrics]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(METRICS_COLUMNS):
            raise ValueError(f"metrics CSV must have columns {METRICS_COLUMNS}, got {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(
                EpochMetrics(
                    int(row["epoch"]),
                    float(row["mse_loss"]),
                    float(row["ce_loss"]),
                    float(row["total_loss"]),
                )
            )
    return out
