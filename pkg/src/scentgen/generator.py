"""Reverse-diffusion sampling: noise to validated molecules.

Each sample starts from per-node Gaussian features and coordinates, steps the
denoiser back from t = T to 1 (subtracting the predicted noise increment of
the additive schedule), decodes atoms by rounding and range/allowlist
filtering, proposes edges by a distance cutoff, types them with the learned
classifier (or the atomic-number heuristic behind a flag), and pushes the
assembled graph through the validity cascade.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import chemrules, diffusion, numcore, smiles
from .chemrules import ValidationReport
from .diffusion import BOND_CLASSES, NoiseSchedule
from .molgraph import (
    MAX_ATOMIC_NUMBER,
    Atom,
    BondType,
    DuplicateBond,
    IndexOutOfRange,
    MoleculeGraph,
    SelfLoop,
    add_bond,
    graph_to_dict,
    new_graph,
)
from .numcore import ParamStore

logger = logging.getLogger(__name__)


class UntrainedParams(RuntimeError):
    """The parameter store is missing denoiser parameters."""


class EmptyInput(ValueError):
    """validity_rate needs at least one report."""


class Mode(str, enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


# C, N, O, F, P, S, Cl
DEFAULT_ALLOWLIST = frozenset({6, 7, 8, 9, 15, 16, 17})

EDGE_CUTOFF = 1.8  # spring rest length 1.5 plus margin


class BondSource(str, enum.Enum):
    CLASSIFIER = "classifier"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class GenerationConfig:
    mode: Mode = Mode.UNCONSTRAINED
    allowlist: frozenset[int] = DEFAULT_ALLOWLIST
    n_atoms: int | None = None
    atom_count_pool: tuple[int, ...] = (8,)
    steps: int = 1000
    tau: float = 0.5
    seed: int = 0
    bond_source: BondSource = BondSource.CLASSIFIER
    edge_cutoff: float = EDGE_CUTOFF

    def __post_init__(self) -> None:
        if self.mode is Mode.CONSTRAINED:
            if not self.allowlist:
                raise ValueError("constrained mode requires a nonempty allowlist")
            if any(z < 1 or z > MAX_ATOMIC_NUMBER for z in self.allowlist):
                raise ValueError("allowlist entries must lie in [1, 118]")
        if self.n_atoms is not None and self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.atom_count_pool:
            raise ValueError("atom_count_pool must be nonempty")


@dataclass
class GenerationReport:
    """Full record of one sample: raw output through validation to SMILES."""

    raw_features: list[float]
    decoded_atoms: list[int]
    proposed_edges: list[tuple[int, int]]
    typed_edges: list[tuple[int, int, str]]
    validation: ValidationReport
    smiles: str | None
    corpus_match: bool
    fragments: int
    steps_executed: int
    seed: int
    graph: dict | None = None

    @property
    def valid(self) -> bool:
        return self.validation.final_verdict

    def to_dict(self) -> dict:
        return {
            "raw_features": [repr(v) for v in self.raw_features],
            "decoded_atoms": self.decoded_atoms,
            "proposed_edges": [list(e) for e in self.proposed_edges],
            "typed_edges": [list(e) for e in self.typed_edges],
            "validation": self.validation.to_dict(),
            "smiles": self.smiles,
            "corpus_match": self.corpus_match,
            "fragments": self.fragments,
            "steps_executed": self.steps_executed,
            "seed": self.seed,
            "graph": self.graph,
        }


REQUIRED_PARAM_PREFIXES = ("cond.", "time.", "input_proj.", "egnn.0.", "egnn.1.", "head.", "bond.")


def _check_trained(params: ParamStore) -> None:
    names = params.names()
    missing = [p for p in REQUIRED_PARAM_PREFIXES if not any(n.startswith(p) for n in names)]
    if missing:
        raise UntrainedParams(f"parameter store lacks components: {missing}")


COORD_RADIUS_CAP = 100.0


def _rescale_coords(coords: np.ndarray) -> np.ndarray:
    """Uniformly shrink a runaway point cloud; relative geometry is preserved.

    The coordinate MLP extrapolates linearly in distance, so an untrained or
    lightly trained model can amplify coordinates super-exponentially across
    reverse steps.  Capping the cloud keeps every later step finite.
    """
    peak = float(np.abs(coords).max(initial=0.0))
    if peak > COORD_RADIUS_CAP:
        coords = coords * (COORD_RADIUS_CAP / peak)
    return coords


def decode_atoms(x: Sequence[float], config: GenerationConfig) -> list[int]:
    """nan_to_num, round, range filter, then the allowlist in constrained mode."""
    values = np.nan_to_num(np.asarray(x, dtype=np.float64).reshape(-1))
    decoded = chemrules.check_atomic_range(values.tolist())
    if config.mode is Mode.CONSTRAINED:
        decoded = [z for z in decoded if z in config.allowlist]
    return decoded


def _decode_keep_indices(x: np.ndarray, config: GenerationConfig) -> list[int]:
    values = np.nan_to_num(np.asarray(x, dtype=np.float64).reshape(-1))
    keep = []
    for idx, v in enumerate(values):
        z = round(float(v))
        if not 1 <= z <= MAX_ATOMIC_NUMBER:
            continue
        if config.mode is Mode.CONSTRAINED and z not in config.allowlist:
            continue
        keep.append(idx)
    return keep


def propose_edges(coords: np.ndarray, decoded_atoms: Sequence[int], cutoff: float = EDGE_CUTOFF) -> list[tuple[int, int]]:
    """Unordered atom pairs closer than the cutoff; no duplicates or self-loops."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = min(coords.shape[0], len(decoded_atoms))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if float(np.linalg.norm(coords[i] - coords[j])) < cutoff:
                edges.append((i, j))
    return edges


def assign_bond_types(
    edges: Sequence[tuple[int, int]],
    node_embeddings: np.ndarray,
    decoded_atoms: Sequence[int],
    params: ParamStore,
    tau: float,
    source: BondSource = BondSource.CLASSIFIER,
) -> list[tuple[int, int, BondType]]:
    """Type each proposed edge via the softmax head or the numeric heuristic."""
    if not edges:
        return []
    if source is BondSource.HEURISTIC:
        return [
            (i, j, chemrules.heuristic_bond_type(decoded_atoms[i], decoded_atoms[j]))
            for i, j in edges
        ]
    h = np.asarray(node_embeddings, dtype=np.float64)
    idx_i = np.asarray([e[0] for e in edges], dtype=np.int64)
    idx_j = np.asarray([e[1] for e in edges], dtype=np.int64)
    pair = numcore.Tensor(np.concatenate([h[idx_i], h[idx_j]], axis=1))
    logits = numcore.linear(params, "bond", pair)
    probs = diffusion.bond_probabilities(logits, tau)
    classes = np.argmax(probs.data, axis=1)
    return [(i, j, BOND_CLASSES[int(c)]) for (i, j), c in zip(edges, classes)]


def _assemble(
    decoded: list[int], coords: np.ndarray, typed_edges: list[tuple[int, int, BondType]]
) -> MoleculeGraph:
    atoms = [Atom(z, tuple(coords[k])) for k, z in enumerate(decoded)]
    graph = new_graph(atoms)
    for i, j, t in typed_edges:
        try:
            graph = add_bond(graph, i, j, t)
        except (DuplicateBond, SelfLoop, IndexOutOfRange) as exc:
            logger.warning("skipping bond (%d, %d): %s", i, j, exc)
    return graph


def finalize(graph: MoleculeGraph, corpus: frozenset[str] = frozenset()) -> tuple[ValidationReport, str | None, bool, MoleculeGraph]:
    """Sanitize, then canonicalize and check corpus membership on success."""
    result = chemrules.sanitize(graph)
    if not result.report.final_verdict:
        return result.report, None, False, result.graph
    text = smiles.canonicalize(result.graph)
    return result.report, text, text in corpus, result.graph


def sample(
    y: np.ndarray | Iterable[str],
    config: GenerationConfig,
    params: ParamStore,
    vocab=None,
    corpus: frozenset[str] = frozenset(),
    seed: int | None = None,
) -> GenerationReport:
    """Draw one molecule for a descriptor query; deterministic given the seed."""
    _check_trained(params)
    if not isinstance(y, np.ndarray):
        if vocab is None:
            raise ValueError("descriptor sets require a vocabulary to build the multi-hot vector")
        from .dataio import multi_hot

        y = multi_hot(y, vocab)
    used_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(used_seed)

    n = config.n_atoms if config.n_atoms is not None else int(rng.choice(config.atom_count_pool))
    schedule = NoiseSchedule(config.steps)
    x = rng.standard_normal((n, 1))
    coords = rng.standard_normal((n, 3))

    steps_executed = 0
    embeddings = np.zeros((n, diffusion.HIDDEN_DIM))
    with numcore.no_grad():
        for t in range(config.steps, 0, -1):
            out = diffusion.denoiser_forward(x, coords, (), t, schedule, y, params)
            sqrt_bt = math.sqrt(schedule.beta(t))
            sqrt_bt_prev = math.sqrt(schedule.beta(t - 1)) if t > 1 else 0.0
            x = np.clip(x - (sqrt_bt - sqrt_bt_prev) * out.eps_hat.data, -1e4, 1e4)
            coords = _rescale_coords(out.coords.data)
            embeddings = out.node_embeddings.data
            steps_executed += 1

    raw = [float(v) for v in x.reshape(-1)]
    keep = _decode_keep_indices(x, config)
    decoded = [int(round(float(np.nan_to_num(x[k, 0])))) for k in keep]
    kept_coords = coords[keep] if keep else np.zeros((0, 3))
    kept_embeddings = embeddings[keep] if keep else np.zeros((0, diffusion.HIDDEN_DIM))

    edges = propose_edges(kept_coords, decoded, config.edge_cutoff)
    typed = assign_bond_types(edges, kept_embeddings, decoded, params, config.tau, config.bond_source)
    assembled = _assemble(decoded, kept_coords, typed)
    report, text, matched, corrected = finalize(assembled, corpus)
    fragments = len(corrected.connected_components())

    return GenerationReport(
        raw_features=raw,
        decoded_atoms=decoded,
        proposed_edges=edges,
        typed_edges=[(i, j, t.value) for i, j, t in typed],
        validation=report,
        smiles=text,
        corpus_match=matched,
        fragments=fragments,
        steps_executed=steps_executed,
        seed=used_seed,
        graph=graph_to_dict(corrected) if report.final_verdict else None,
    )


def validity_rate(reports: Sequence[GenerationReport]) -> float:
    """Fraction of reports whose validation cascade fully passed."""
    if not reports:
        raise EmptyInput("no generation reports")
    return sum(1 for r in reports if r.valid) / len(reports)


def summarize(reports: Sequence[GenerationReport], mode: Mode, seed: int) -> dict:
    """Machine-readable run summary: rate, counts, first-failure histogram."""
    failure_stages: dict[str, int] = {}
    for r in reports:
        if r.valid:
            continue
        for stage in r.validation.stages:
            if not stage.passed:
                failure_stages[stage.name] = failure_stages.get(stage.name, 0) + 1
                break
    return {
        "samples": len(reports),
        "valid": sum(1 for r in reports if r.valid),
        "validity_rate": (validity_rate(reports) if reports else None),
        "corpus_matches": sum(1 for r in reports if r.corpus_match),
        "failure_stages": dict(sorted(failure_stages.items())),
        "mode": mode.value,
        "seed": seed,
    }
