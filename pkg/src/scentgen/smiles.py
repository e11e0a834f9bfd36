"""SMILES reader, writer, and canonicalizer over a pragmatic grammar subset.

Supported: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I), aromatic
lowercase forms, bracket atoms for every other element, bond symbols - = # :,
branches, ring closures (1-9 and %nn), and dot-separated fragments.  Not
supported: stereo descriptors, isotopes, charges, and explicit H counts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import chemrules
from .molgraph import (
    MAX_ATOMIC_NUMBER,
    SYMBOL_TO_NUMBER,
    ELEMENT_SYMBOLS,
    Atom,
    BondType,
    DuplicateBond,
    MoleculeGraph,
    UnknownElement,
    add_bond,
    new_graph,
)

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_CHARS = "bcnops"
LOWERCASE_WRITABLE = {6: "c", 7: "n", 8: "o", 16: "s"}

_BOND_CHAR_TO_TYPE = {
    "-": BondType.SINGLE,
    "=": BondType.DOUBLE,
    "#": BondType.TRIPLE,
    ":": BondType.AROMATIC,
}
_TYPE_TO_BOND_CHAR = {
    BondType.SINGLE: "-",
    BondType.DOUBLE: "=",
    BondType.TRIPLE: "#",
    BondType.AROMATIC: ":",
}

_BRACKET_SYMBOL = re.compile(r"^([A-Z][a-z]{0,2}|[bcnops])$")


class SmilesSyntaxError(ValueError):
    """Grammar violation, carrying the offending position."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


class UnwritableGraph(ValueError):
    """The graph contains atoms outside the writable element range."""


@dataclass
class _ParsedAtom:
    atomic_number: int
    aromatic: bool


def _default_bond(a: _ParsedAtom, b: _ParsedAtom) -> BondType:
    return BondType.AROMATIC if (a.aromatic and b.aromatic) else BondType.SINGLE


def parse(text: str) -> MoleculeGraph:
    """Parse a SMILES string into a graph with all-zero positions.

    Implicit hydrogens are not materialized; geometry is not encoded in the
    notation, so every atom sits at the origin.
    """
    s = text.strip()
    atoms: list[_ParsedAtom] = []
    bonds: list[tuple[int, int, BondType]] = []
    bond_keys: set[tuple[int, int]] = set()
    anchor: int | None = None
    pending: str | None = None
    pending_pos = 0
    after_dot = False
    branch_stack: list[int] = []
    ring_open: dict[int, tuple[int, str | None, int]] = {}

    def push_bond(i: int, j: int, bond: BondType, pos: int) -> None:
        key = (min(i, j), max(i, j))
        if key in bond_keys:
            raise SmilesSyntaxError(pos, f"duplicate bond between atoms {key[0]} and {key[1]}")
        bond_keys.add(key)
        bonds.append((key[0], key[1], bond))

    def attach(idx: int, pos: int) -> None:
        nonlocal anchor, pending, after_dot
        if anchor is not None and not after_dot:
            bond = _BOND_CHAR_TO_TYPE[pending] if pending else _default_bond(atoms[anchor], atoms[idx])
            push_bond(anchor, idx, bond, pos)
        elif pending is not None:
            raise SmilesSyntaxError(pending_pos, "bond symbol with no preceding atom to bond from")
        anchor = idx
        pending = None
        after_dot = False

    def handle_ring(digit: int, pos: int) -> None:
        nonlocal pending
        if anchor is None:
            raise SmilesSyntaxError(pos, "ring closure before any atom")
        if digit in ring_open:
            other, other_bond, other_pos = ring_open.pop(digit)
            if other == anchor:
                raise SmilesSyntaxError(pos, f"ring closure {digit} bonds an atom to itself")
            if pending and other_bond and pending != other_bond:
                raise SmilesSyntaxError(pos, f"conflicting bond symbols for ring closure {digit}")
            symbol = pending or other_bond
            bond = _BOND_CHAR_TO_TYPE[symbol] if symbol else _default_bond(atoms[other], atoms[anchor])
            push_bond(other, anchor, bond, pos)
        else:
            ring_open[digit] = (anchor, pending, pos)
        pending = None

    i = 0
    n = len(s)
    while i < n:
        ch = s[i]
        if ch == "[":
            end = s.find("]", i)
            if end < 0:
                raise SmilesSyntaxError(i, "unterminated bracket atom")
            body = s[i + 1 : end]
            m = _BRACKET_SYMBOL.match(body)
            if not m:
                raise SmilesSyntaxError(i, f"unsupported bracket atom [{body}]")
            symbol = body
            aromatic = symbol[0].islower()
            lookup = symbol.capitalize() if aromatic else symbol
            z = SYMBOL_TO_NUMBER.get(lookup)
            if z is None:
                raise UnknownElement(f"position {i}: unknown element symbol [{body}]")
            atoms.append(_ParsedAtom(z, aromatic))
            attach(len(atoms) - 1, i)
            i = end + 1
            continue
        two = s[i : i + 2]
        if two in ("Cl", "Br"):
            atoms.append(_ParsedAtom(SYMBOL_TO_NUMBER[two], False))
            attach(len(atoms) - 1, i)
            i += 2
            continue
        if ch in "BCNOPSFI":
            atoms.append(_ParsedAtom(SYMBOL_TO_NUMBER[ch], False))
            attach(len(atoms) - 1, i)
            i += 1
            continue
        if ch in AROMATIC_CHARS:
            atoms.append(_ParsedAtom(SYMBOL_TO_NUMBER[ch.upper()], True))
            attach(len(atoms) - 1, i)
            i += 1
            continue
        if ch in "-=#:":
            if pending is not None:
                raise SmilesSyntaxError(i, "two bond symbols in a row")
            if anchor is None:
                raise SmilesSyntaxError(i, "bond symbol before any atom")
            pending = ch
            pending_pos = i
            i += 1
            continue
        if ch == "(":
            if anchor is None:
                raise SmilesSyntaxError(i, "branch opened before any atom")
            if pending is not None:
                raise SmilesSyntaxError(i, "bond symbol before branch open")
            branch_stack.append(anchor)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise SmilesSyntaxError(i, "unmatched closing parenthesis")
            if pending is not None:
                raise SmilesSyntaxError(pending_pos, "dangling bond before branch close")
            anchor = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit():
            handle_ring(int(ch), i)
            i += 1
            continue
        if ch == "%":
            if i + 2 >= n or not s[i + 1 : i + 3].isdigit():
                raise SmilesSyntaxError(i, "%% ring closure needs two digits")
            handle_ring(int(s[i + 1 : i + 3]), i)
            i += 3
            continue
        if ch == ".":
            if pending is not None:
                raise SmilesSyntaxError(pending_pos, "bond symbol adjacent to fragment dot")
            after_dot = True
            anchor = None
            i += 1
            continue
        raise SmilesSyntaxError(i, f"unexpected character {ch!r}")

    if pending is not None:
        raise SmilesSyntaxError(pending_pos, "dangling bond symbol at end of input")
    if branch_stack:
        raise SmilesSyntaxError(n, "unclosed branch")
    if ring_open:
        digit, (_, _, pos) = sorted(ring_open.items())[0]
        raise SmilesSyntaxError(pos, f"unclosed ring closure {digit}")

    graph = new_graph(Atom(a.atomic_number) for a in atoms)
    for i_, j_, t in bonds:
        try:
            graph = add_bond(graph, i_, j_, t)
        except DuplicateBond as exc:  # pragma: no cover - pre-checked above
            raise SmilesSyntaxError(0, str(exc))
    return graph


def _lowercase_atoms(graph: MoleculeGraph) -> set[int]:
    """Atoms writable in aromatic lowercase: all their aromatic bonds lie on valid rings."""
    has_aromatic = any(t is BondType.AROMATIC for _, _, t in graph.bonds)
    if not has_aromatic:
        return set()
    good = chemrules.valid_aromatic_bonds(graph)
    out: set[int] = set()
    adj = graph.adjacency()
    for idx, atom in enumerate(graph.atoms):
        if atom.atomic_number not in LOWERCASE_WRITABLE:
            continue
        arom = [(min(idx, j), max(idx, j)) for j, t in adj[idx] if t is BondType.AROMATIC]
        if arom and all(pair in good for pair in arom):
            out.add(idx)
    return out


def _bond_token(t: BondType, lower_i: bool, lower_j: bool) -> str:
    if t is BondType.SINGLE:
        return "-" if (lower_i and lower_j) else ""
    if t is BondType.AROMATIC:
        return "" if (lower_i and lower_j) else ":"
    return _TYPE_TO_BOND_CHAR[t]


def _atom_token(z: int, lowercase: bool) -> str:
    symbol = ELEMENT_SYMBOLS[z - 1]
    if lowercase:
        return LOWERCASE_WRITABLE[z]
    if symbol in ORGANIC_SUBSET:
        return symbol
    return f"[{symbol}]"


def write(graph: MoleculeGraph, _ranks: list[int] | None = None) -> str:
    """Write a deterministic SMILES string; fragments are dot-separated.

    The traversal order is controlled by `_ranks` (lower rank first), which the
    canonicalizer uses to pin a unique output.  Re-parsing the result yields a
    graph with the same elements and the same typed bond multiset.
    """
    n = graph.n_atoms
    if n == 0:
        return ""
    for idx, atom in enumerate(graph.atoms):
        if not 1 <= atom.atomic_number <= MAX_ATOMIC_NUMBER:
            raise UnwritableGraph(f"atom {idx} has unwritable atomic number {atom.atomic_number}")
    ranks = list(_ranks) if _ranks is not None else list(range(n))
    lowercase = _lowercase_atoms(graph)
    adj = graph.adjacency()
    for u in adj:
        adj[u].sort(key=lambda item: ranks[item[0]])

    pieces = []
    components = sorted(graph.connected_components(), key=lambda comp: min(ranks[i] for i in comp))
    for comp in components:
        pieces.append(_write_component(graph, comp, ranks, lowercase, adj))
    return ".".join(pieces)


def _write_component(
    graph: MoleculeGraph,
    comp: list[int],
    ranks: list[int],
    lowercase: set[int],
    adj: dict[int, list[tuple[int, BondType]]],
) -> str:
    start = min(comp, key=lambda i: ranks[i])
    bond_of = graph.bond_map()

    # Depth-first spanning tree; non-tree edges become ring closures.
    visited = {start}
    emit_seq: list[int] = [start]
    tree_children: dict[int, list[int]] = {u: [] for u in comp}
    closures: list[tuple[int, int]] = []
    closure_keys: set[tuple[int, int]] = set()

    def scout(u: int, parent: int | None) -> None:
        for v, _t in adj[u]:
            if v == parent:
                continue
            if v in visited:
                key = (min(u, v), max(u, v))
                if key not in closure_keys:
                    closure_keys.add(key)
                    closures.append((v, u))
            else:
                visited.add(v)
                emit_seq.append(v)
                tree_children[u].append(v)
                scout(v, u)

    scout(start, None)
    emit_index = {u: k for k, u in enumerate(emit_seq)}

    # Allocate ring-closure digits by opening position, reusing closed digits.
    closure_at: dict[int, list[tuple[int, int]]] = {}  # atom -> [(partner, digit)]
    in_use: dict[int, int] = {}  # digit -> emit index where it closes
    events = sorted(
        closures,
        key=lambda pair: (
            min(emit_index[pair[0]], emit_index[pair[1]]),
            max(emit_index[pair[0]], emit_index[pair[1]]),
        ),
    )
    for a, b in events:
        first, second = sorted((a, b), key=lambda x: emit_index[x])
        opened_at = emit_index[first]
        for d in [d for d, closes in in_use.items() if closes < opened_at]:
            del in_use[d]
        digit = 1
        while digit in in_use:
            digit += 1
        in_use[digit] = emit_index[second]
        closure_at.setdefault(first, []).append((second, digit))
        closure_at.setdefault(second, []).append((first, digit))

    def digit_token(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(u: int, parent: int | None) -> str:
        out = [_atom_token(graph.atoms[u].atomic_number, u in lowercase)]
        for partner, digit in sorted(closure_at.get(u, []), key=lambda pd: emit_index[pd[0]]):
            if emit_index[u] < emit_index[partner]:
                key = (min(u, partner), max(u, partner))
                out.append(_bond_token(bond_of[key], u in lowercase, partner in lowercase))
            out.append(digit_token(digit))
        children = tree_children[u]
        for pos, v in enumerate(children):
            key = (min(u, v), max(u, v))
            bond = _bond_token(bond_of[key], u in lowercase, v in lowercase)
            sub = bond + emit(v, u)
            if pos < len(children) - 1:
                out.append(f"({sub})")
            else:
                out.append(sub)
        return "".join(out)

    return emit(start, None)


_BOND_RANK = {BondType.SINGLE: 1, BondType.DOUBLE: 2, BondType.TRIPLE: 3, BondType.AROMATIC: 4}


def _dense(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(graph: MoleculeGraph, ranks: list[int]) -> list[int]:
    """Iteratively sharpen ranks with neighbor (bond, rank) multisets until stable."""
    adj = graph.adjacency()
    current = list(ranks)
    for _ in range(graph.n_atoms + 1):
        signatures = [
            (current[i], tuple(sorted((_BOND_RANK[t], current[j]) for j, t in adj[i])))
            for i in range(graph.n_atoms)
        ]
        refined = _dense(signatures)
        if refined == current:
            return refined
        current = refined
    return current


def _initial_ranks(graph: MoleculeGraph) -> list[int]:
    adj = graph.adjacency()
    invariants = []
    for i, atom in enumerate(graph.atoms):
        orders = sorted(_BOND_RANK[t] for _, t in adj[i])
        invariants.append((atom.atomic_number, len(orders), tuple(orders)))
    return _dense(invariants)


_CANONICAL_BUDGET = 10000


def _canonical_component(graph: MoleculeGraph) -> str:
    best: list[str] = []
    leaves = [0]

    def search(ranks: list[int]) -> None:
        if leaves[0] > _CANONICAL_BUDGET:
            raise RuntimeError("canonical ordering search budget exceeded")
        groups: dict[int, list[int]] = {}
        for idx, r in enumerate(ranks):
            groups.setdefault(r, []).append(idx)
        tied = sorted(r for r, members in groups.items() if len(members) > 1)
        if not tied:
            leaves[0] += 1
            candidate = write(graph, _ranks=ranks)
            if not best or candidate < best[0]:
                best[:] = [candidate]
            return
        members = groups[tied[0]]
        for pick in members:
            keys = [(r, 0 if (r != tied[0] or idx == pick) else 1) for idx, r in enumerate(ranks)]
            search(_refine(graph, _dense(keys)))

    search(_refine(graph, _initial_ranks(graph)))
    return best[0]


def _subgraph(graph: MoleculeGraph, indices: list[int]) -> MoleculeGraph:
    remap = {old: new for new, old in enumerate(indices)}
    atoms = tuple(graph.atoms[i] for i in indices)
    bonds = tuple(
        sorted(
            (min(remap[i], remap[j]), max(remap[i], remap[j]), t)
            for i, j, t in graph.bonds
            if i in remap and j in remap
        )
    )
    return MoleculeGraph(atoms=atoms, bonds=bonds)


def canonicalize(graph: MoleculeGraph) -> str:
    """Atom-order-independent SMILES: same molecule, same string, byte for byte.

    Ranks come from iterative invariant refinement; remaining ties are broken
    by exploring each individualization and keeping the smallest string.
    Fragments are canonicalized independently and joined in sorted order.
    """
    if graph.n_atoms == 0:
        return ""
    pieces = [_canonical_component(_subgraph(graph, comp)) for comp in graph.connected_components()]
    return ".".join(sorted(pieces))
