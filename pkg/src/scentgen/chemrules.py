"""Chemical validity cascade for molecular graphs.

The cascade runs five stages in a fixed order: atomic-number range filter,
edge deduplication, valence limits with implicit-hydrogen fill, aromatic ring
and formal-charge checks, and kekule-assignment verification.  Range and dedup
stages correct the graph; the remaining stages only record pass/fail verdicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .molgraph import (
    MAX_ATOMIC_NUMBER,
    SYMBOL_TO_NUMBER,
    BondType,
    MoleculeGraph,
    UnknownElement,
)

# Allowed total bond orders (heavy bonds + implicit hydrogens) per element.
DEFAULT_VALENCES: dict[int, tuple[int, ...]] = {
    1: (1,),            # H
    5: (3,),            # B
    6: (4,),            # C
    7: (3, 5),          # N
    8: (2,),            # O
    9: (1,),            # F
    14: (4,),           # Si
    15: (3, 5),         # P
    16: (2, 4, 6),      # S
    17: (1,),           # Cl
    33: (3, 5),         # As
    34: (2, 4, 6),      # Se
    35: (1,),           # Br
    53: (1,),           # I
}

# Outer-shell electron counts for the same main-group elements.
VALENCE_ELECTRONS: dict[int, int] = {
    1: 1, 5: 3, 6: 4, 7: 5, 8: 6, 9: 7,
    14: 4, 15: 5, 16: 6, 17: 7, 33: 5, 34: 6, 35: 7, 53: 7,
}

# Elements allowed to sit on an aromatic ring.
AROMATIC_CAPABLE = frozenset({6, 7, 8, 16})

CASCADE_STAGES = ("atomic_range", "edge_dedup", "valence", "aromaticity_charge", "kekulization")


@dataclass(frozen=True)
class ValenceTable:
    """Map from atomic number to the allowed total bond orders."""

    allowed: dict[int, tuple[int, ...]]

    def __post_init__(self) -> None:
        for z, orders in self.allowed.items():
            if not orders:
                raise ValueError(f"element {z} has an empty valence list")
            if any(int(v) != v or v <= 0 for v in orders):
                raise ValueError(f"element {z} has non-positive or fractional orders {orders}")

    @classmethod
    def default(cls) -> "ValenceTable":
        return cls({z: tuple(v) for z, v in DEFAULT_VALENCES.items()})

    @classmethod
    def from_json(cls, path: str) -> "ValenceTable":
        """Load a table from JSON keyed by element symbol, e.g. {"C": [4]}."""
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        allowed: dict[int, tuple[int, ...]] = {}
        for symbol, orders in raw.items():
            z = SYMBOL_TO_NUMBER.get(symbol)
            if z is None:
                raise UnknownElement(f"unknown element symbol {symbol!r} in valence table")
            allowed[z] = tuple(int(v) for v in orders)
        return cls(allowed)

    def max_valence(self, z: int) -> int:
        if z not in self.allowed:
            raise UnknownElement(f"no valence entry for atomic number {z}")
        return max(self.allowed[z])

    def smallest_fitting(self, z: int, order_sum: int) -> int | None:
        """Smallest allowed valence >= order_sum, or None if the sum exceeds all."""
        if z not in self.allowed:
            raise UnknownElement(f"no valence entry for atomic number {z}")
        fitting = [v for v in self.allowed[z] if v >= order_sum]
        return min(fitting) if fitting else None


@dataclass(frozen=True)
class StageResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    """Ordered per-stage verdicts; final verdict is the conjunction."""

    stages: list[StageResult] = field(default_factory=list)

    @property
    def final_verdict(self) -> bool:
        return all(s.passed for s in self.stages)

    def stage(self, name: str) -> StageResult:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "stages": [{"name": s.name, "passed": s.passed, "detail": s.detail} for s in self.stages],
            "final_verdict": self.final_verdict,
        }


def check_atomic_range(values: Sequence[float]) -> list[int]:
    """Round noisy scalars to atomic numbers, silently skipping out-of-range ones.

    Non-finite entries are treated as 0 and therefore dropped.
    """
    kept = []
    for v in values:
        v = float(v)
        if not math.isfinite(v):
            v = 0.0
        z = round(v)
        if 1 <= z <= MAX_ATOMIC_NUMBER:
            kept.append(int(z))
    return kept


def dedup_edges(edges: Iterable[tuple[int, int, BondType]]) -> list[tuple[int, int, BondType]]:
    """Keep the first occurrence per unordered pair; drop self-loops."""
    seen: set[tuple[int, int]] = set()
    out = []
    for i, j, t in edges:
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        out.append((i, j, t))
    return out


def heuristic_bond_type(z_i: int, z_j: int) -> BondType:
    """Map the atomic-number difference to a bond order, symmetric in its arguments."""
    order = 1 + abs(int(z_i) - int(z_j)) % 3
    return {1: BondType.SINGLE, 2: BondType.DOUBLE, 3: BondType.TRIPLE}[order]


def _lone_pair_donors(graph: MoleculeGraph) -> set[int]:
    """Atoms whose ring participation contributes a lone pair (two pi electrons).

    Oxygen and sulfur always donate the pair.  Nitrogen donates it only when a
    third substituent pins its in-plane bond (N-substituted pyrrole pattern);
    a bare two-bond ring nitrogen is pyridine-like and contributes one electron
    through its double bond instead.
    """
    donors: set[int] = set()
    adj = graph.adjacency()
    for idx, atom in enumerate(graph.atoms):
        bonds = adj[idx]
        n_arom = sum(1 for _, t in bonds if t is BondType.AROMATIC)
        if n_arom < 2:
            continue
        z = atom.atomic_number
        if z in (8, 16):
            donors.add(idx)
        elif z == 7 and len(bonds) > n_arom:
            donors.add(idx)
    return donors


def _aromatic_bond_order(graph: MoleculeGraph, donors: set[int]) -> dict[int, float]:
    """Per-atom heavy bond-order sums with aromatic bonds weighted per role.

    An aromatic bond counts 1.5 toward a pi-bond participant and 1.0 toward a
    lone-pair donor, matching the kekule equivalents of each role.
    """
    sums = {i: 0.0 for i in range(graph.n_atoms)}
    for i, j, t in graph.bonds:
        for end in (i, j):
            if t is BondType.AROMATIC:
                sums[end] += 1.0 if end in donors else 1.5
            else:
                sums[end] += t.order
    return sums


def _rounded_order_sums(graph: MoleculeGraph) -> dict[int, int]:
    """Heavy bond-order sum per atom, rounded half-up after aromatic weighting."""
    donors = _lone_pair_donors(graph)
    raw = _aromatic_bond_order(graph, donors)
    return {i: int(math.floor(s + 0.5)) for i, s in raw.items()}


@dataclass(frozen=True)
class AtomValenceDetail:
    index: int
    atomic_number: int
    order_sum: int
    limit: int
    implicit_hydrogens: int
    ok: bool


@dataclass(frozen=True)
class ValenceCheckResult:
    passed: bool
    per_atom: tuple[AtomValenceDetail, ...]

    def failures(self) -> list[AtomValenceDetail]:
        return [d for d in self.per_atom if not d.ok]


def valence_check(graph: MoleculeGraph, table: ValenceTable | None = None) -> ValenceCheckResult:
    """Verify every atom's heavy bond-order sum fits an allowed valence.

    Implicit hydrogens fill the gap up to the smallest allowed valence.
    Raises UnknownElement for atoms missing from the table.
    """
    table = table or ValenceTable.default()
    sums = _rounded_order_sums(graph)
    details = []
    for idx, atom in enumerate(graph.atoms):
        z = atom.atomic_number
        limit = table.max_valence(z)
        s = sums[idx]
        fitting = table.smallest_fitting(z, s)
        ok = s <= limit
        implicit_h = (fitting - s) if fitting is not None else 0
        details.append(AtomValenceDetail(idx, z, s, limit, implicit_h, ok))
    return ValenceCheckResult(all(d.ok for d in details), tuple(details))


def _aromatic_adjacency(graph: MoleculeGraph) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {}
    for i, j, t in graph.bonds:
        if t is BondType.AROMATIC:
            adj.setdefault(i, []).append(j)
            adj.setdefault(j, []).append(i)
    return adj


def _huckel_ok(cycle: list[int], graph: MoleculeGraph, donors: set[int]) -> bool:
    electrons = 0
    for idx in cycle:
        z = graph.atoms[idx].atomic_number
        if z not in AROMATIC_CAPABLE:
            return False
        electrons += 2 if idx in donors else 1
    return electrons % 4 == 2


def _cycles_through(adj: dict[int, list[int]], i: int, j: int, max_len: int = 18) -> Iterable[list[int]]:
    """Simple cycles in the aromatic subgraph containing edge (i, j)."""
    path = [i, j]
    on_path = {i, j}

    def extend(u: int):
        for v in adj.get(u, ()):
            if v == i and len(path) >= 3:
                yield list(path)
            elif v not in on_path and len(path) < max_len:
                path.append(v)
                on_path.add(v)
                yield from extend(v)
                path.pop()
                on_path.discard(v)

    yield from extend(j)


def valid_aromatic_bonds(graph: MoleculeGraph) -> set[tuple[int, int]]:
    """Aromatic bonds lying on some all-capable simple cycle with a 4n+2 count."""
    adj = _aromatic_adjacency(graph)
    donors = _lone_pair_donors(graph)
    good: set[tuple[int, int]] = set()
    for i, j, t in graph.bonds:
        if t is not BondType.AROMATIC:
            continue
        for cycle in _cycles_through(adj, i, j):
            if _huckel_ok(cycle, graph, donors):
                good.add((i, j))
                break
    return good


def formal_charges(graph: MoleculeGraph, table: ValenceTable | None = None) -> list[int | None]:
    """Per-atom formal charge, or None when it cannot be inferred.

    Charge = outer electrons - nonbonded electrons - total bond order, with the
    nonbonded count inferred from the smallest allowed valence that fits the
    bond-order sum.  Inference fails (None) for atoms outside the tables or
    whose bond sum exceeds every allowed valence.
    """
    table = table or ValenceTable.default()
    sums = _rounded_order_sums(graph)
    charges: list[int | None] = []
    for idx, atom in enumerate(graph.atoms):
        z = atom.atomic_number
        electrons = VALENCE_ELECTRONS.get(z)
        if electrons is None or z not in table.allowed:
            charges.append(None)
            continue
        target = table.smallest_fitting(z, sums[idx])
        if target is None or electrons < target:
            charges.append(None)
            continue
        nonbonded = electrons - target
        charges.append(electrons - nonbonded - target)
    return charges


@dataclass(frozen=True)
class AromaticityCheckResult:
    passed: bool
    detail: str
    invalid_bonds: tuple[tuple[int, int], ...]
    charges: tuple[int | None, ...]


def aromaticity_and_charge_check(
    graph: MoleculeGraph, table: ValenceTable | None = None
) -> AromaticityCheckResult:
    """Require every aromatic bond on a Huckel-valid ring and all charges zero."""
    good = valid_aromatic_bonds(graph)
    bad = tuple(
        (i, j) for i, j, t in graph.bonds if t is BondType.AROMATIC and (i, j) not in good
    )
    charges = tuple(formal_charges(graph, table))
    charge_bad = [i for i, c in enumerate(charges) if c is None or c != 0]
    problems = []
    if bad:
        problems.append(f"{len(bad)} aromatic bond(s) outside valid rings")
    if charge_bad:
        problems.append(f"nonzero or indeterminate formal charge on atoms {charge_bad}")
    return AromaticityCheckResult(not problems, "; ".join(problems), bad, charges)


def _match_pi_atoms(nodes: list[int], edges: set[tuple[int, int]]) -> bool:
    """Backtracking perfect matching over the pi-bond participants."""
    free = set(nodes)

    def solve() -> bool:
        if not free:
            return True
        u = min(free)
        free.discard(u)
        for a, b in edges:
            if a == u and b in free:
                v = b
            elif b == u and a in free:
                v = a
            else:
                continue
            free.discard(v)
            if solve():
                return True
            free.add(v)
        free.add(u)
        return False

    return solve()


def kekule_assignment_exists(graph: MoleculeGraph) -> tuple[bool, str]:
    """Whether each aromatic system admits an alternating single/double form.

    Lone-pair donors take no double bond; every other aromatic atom needs
    exactly one, which reduces to a perfect matching over the remaining atoms.
    """
    adj = _aromatic_adjacency(graph)
    if not adj:
        return True, "no aromatic bonds"
    donors = _lone_pair_donors(graph)
    seen: set[int] = set()
    for start in sorted(adj):
        if start in seen:
            continue
        stack = [start]
        component = set()
        seen.add(start)
        while stack:
            u = stack.pop()
            component.add(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        pi_atoms = sorted(component - donors)
        pi_edges = {
            (i, j)
            for i, j, t in graph.bonds
            if t is BondType.AROMATIC and i in component and j in component
            and i not in donors and j not in donors
        }
        if not _match_pi_atoms(pi_atoms, pi_edges):
            return False, f"aromatic system containing atom {min(component)} is not kekulizable"
    return True, "kekule assignment found"


@dataclass(frozen=True)
class SanitizeResult:
    graph: MoleculeGraph
    report: ValidationReport


def sanitize(graph: MoleculeGraph, table: ValenceTable | None = None) -> SanitizeResult:
    """Run the full cascade, returning the corrected graph and per-stage verdicts.

    All failures are recorded in the report; nothing raises.  The operation is
    idempotent: sanitizing its own output changes nothing.
    """
    table = table or ValenceTable.default()
    report = ValidationReport()

    # Stage 1: atomic range. Out-of-range atoms are dropped along with their bonds.
    keep = [i for i, a in enumerate(graph.atoms) if 1 <= a.atomic_number <= MAX_ATOMIC_NUMBER]
    dropped = graph.n_atoms - len(keep)
    remap = {old: new for new, old in enumerate(keep)}
    atoms = tuple(graph.atoms[i] for i in keep)
    bonds_kept = [
        (remap[i], remap[j], t) for i, j, t in graph.bonds if i in remap and j in remap
    ]
    if not atoms:
        report.stages.append(StageResult("atomic_range", False, f"no atoms remain (dropped {dropped})"))
    else:
        report.stages.append(StageResult("atomic_range", True, f"dropped {dropped} atom(s)"))

    # Stage 2: edge dedup (also removes self-loops).
    deduped = dedup_edges(bonds_kept)
    removed = len(bonds_kept) - len(deduped)
    normalized = tuple(sorted((min(i, j), max(i, j), t) for i, j, t in deduped))
    corrected = MoleculeGraph(atoms=atoms, bonds=normalized)
    report.stages.append(StageResult("edge_dedup", True, f"removed {removed} edge(s)"))

    # Stage 3: valence.
    try:
        vres = valence_check(corrected, table)
        if vres.passed:
            report.stages.append(StageResult("valence", True, "all atoms within allowed valence"))
        else:
            bad = ", ".join(
                f"atom {d.index} (z={d.atomic_number}) order sum {d.order_sum} > {d.limit}"
                for d in vres.failures()
            )
            report.stages.append(StageResult("valence", False, bad))
    except UnknownElement as exc:
        report.stages.append(StageResult("valence", False, str(exc)))

    # Stage 4: aromaticity and formal charge.
    ares = aromaticity_and_charge_check(corrected, table)
    report.stages.append(
        StageResult("aromaticity_charge", ares.passed, ares.detail or "aromatic rings balanced, charges zero")
    )

    # Stage 5: kekule verification.
    kek_ok, kek_detail = kekule_assignment_exists(corrected)
    report.stages.append(StageResult("kekulization", kek_ok, kek_detail))

    return SanitizeResult(corrected, report)
