"""Supply-network data model: firms, directed supply edges, firm-level splits.

The world file is line-oriented UTF-8 with three sections::

    #companies
    id|name|region|sic|tok tok tok ...
    #edges
    supplier_id,customer_id
    #competitors
    id,id

Splits serialize to the same sectioned format plus a ``#meta seed=...`` header.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rng import make_rng, mix_seed

Edge = tuple[int, int]
LabeledPair = tuple[int, int, bool]

NEIGHBOR_CAP = 32


class WorldParseError(ValueError):
    """Malformed world/split file; message names the offending line."""


class IntegrityError(ValueError):
    """Structural invariant violated (duplicate id, dangling edge, self-loop)."""


class SamplingExhaustedError(RuntimeError):
    """Not enough candidate pairs satisfy the requested membership rule."""


@dataclass
class Company:
    id: int
    name: str
    description: tuple[int, ...]
    region: str
    sic_label: str
    features: np.ndarray | None = None


class SupplyGraph:
    """Immutable directed firm network. Edges run supplier -> customer."""

    def __init__(self, companies: list[Company], edges: set[Edge] | frozenset[Edge]):
        table: dict[int, Company] = {}
        for c in companies:
            if c.id < 0:
                raise IntegrityError(f"negative company id {c.id}")
            if c.id in table:
                raise IntegrityError(f"duplicate company id {c.id}")
            table[c.id] = c
        for a, b in edges:
            if a == b:
                raise IntegrityError(f"self-loop edge ({a},{a})")
            if a not in table or b not in table:
                raise IntegrityError(f"edge ({a},{b}) references unknown firm")
        self.companies = table
        self.edges: frozenset[Edge] = frozenset(edges)
        self.ids: tuple[int, ...] = tuple(sorted(table))
        self._neighbors: dict[int, tuple[int, ...]] | None = None

    def __len__(self) -> int:
        return len(self.companies)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def company(self, firm_id: int) -> Company:
        return self.companies[firm_id]

    def neighbors(self, firm_id: int) -> tuple[int, ...]:
        """Union of in- and out-neighbors, ascending."""
        if self._neighbors is None:
            nbr: dict[int, set[int]] = {i: set() for i in self.ids}
            for a, b in self.edges:
                nbr[a].add(b)
                nbr[b].add(a)
            self._neighbors = {i: tuple(sorted(s)) for i, s in nbr.items()}
        if firm_id not in self.companies:
            raise KeyError(f"unknown firm id {firm_id}")
        return self._neighbors[firm_id]

    def sic_labels(self) -> tuple[str, ...]:
        return tuple(sorted({c.sic_label for c in self.companies.values()}))


@dataclass(frozen=True)
class Subgraph:
    """A center firm plus capped 1-hop neighborhood; members[0] is the center."""

    center: int
    members: tuple[int, ...]
    local_edges: frozenset[Edge]


@dataclass(frozen=True)
class SplitSpec:
    train_firms: frozenset[int]
    test_firms: frozenset[int]
    train_edges: frozenset[Edge]
    inductive_pairs: tuple[LabeledPair, ...]
    fully_inductive_pairs: tuple[LabeledPair, ...]
    seed: int


# ---------------------------------------------------------------------------
# world file I/O

def _parse_company_line(line: str, lineno: int) -> Company:
    parts = line.split("|")
    if len(parts) != 5:
        raise WorldParseError(f"line {lineno}: expected 5 '|' fields, got {len(parts)}")
    raw_id, name, region, sic, desc = parts
    try:
        cid = int(raw_id)
    except ValueError:
        raise WorldParseError(f"line {lineno}: bad company id {raw_id!r}") from None
    try:
        tokens = tuple(int(t) for t in desc.split()) if desc.strip() else ()
    except ValueError:
        raise WorldParseError(f"line {lineno}: bad description token in {desc!r}") from None
    if any(t < 0 for t in tokens):
        raise WorldParseError(f"line {lineno}: negative description token")
    return Company(id=cid, name=name, description=tokens, region=region, sic_label=sic)


def _parse_pair_line(line: str, lineno: int) -> Edge:
    parts = line.split(",")
    if len(parts) != 2:
        raise WorldParseError(f"line {lineno}: expected 'a,b', got {line!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise WorldParseError(f"line {lineno}: bad id in {line!r}") from None


def load_world(path: str | Path) -> tuple[SupplyGraph, frozenset[Edge]]:
    """Read a world file; returns the validated graph and competitor pair set."""
    companies: list[Company] = []
    edges: list[Edge] = []
    competitors: list[Edge] = []
    section = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            section = line
            if section not in ("#companies", "#edges", "#competitors"):
                raise WorldParseError(f"line {lineno}: unknown section {section!r}")
            continue
        if section == "#companies":
            companies.append(_parse_company_line(line, lineno))
        elif section == "#edges":
            edges.append(_parse_pair_line(line, lineno))
        elif section == "#competitors":
            competitors.append(_parse_pair_line(line, lineno))
        else:
            raise WorldParseError(f"line {lineno}: data before any section header")

    if len(set(edges)) != len(edges):
        raise IntegrityError("duplicate edge in world file")
    graph = SupplyGraph(companies, set(edges))

    comp: set[Edge] = set()
    for a, b in competitors:
        if a == b:
            raise IntegrityError(f"competitor pair ({a},{a}) is a self-pair")
        if a not in graph.companies or b not in graph.companies:
            raise IntegrityError(f"competitor pair ({a},{b}) references unknown firm")
        pair = (a, b) if a < b else (b, a)
        if pair in comp:
            raise IntegrityError(f"duplicate competitor pair {pair}")
        comp.add(pair)
    return graph, frozenset(comp)


def save_world(graph: SupplyGraph, competitors: frozenset[Edge], path: str | Path) -> None:
    lines = ["#companies"]
    for cid in graph.ids:
        c = graph.companies[cid]
        desc = " ".join(str(t) for t in c.description)
        lines.append(f"{c.id}|{c.name}|{c.region}|{c.sic_label}|{desc}")
    lines.append("#edges")
    lines.extend(f"{a},{b}" for a, b in sorted(graph.edges))
    lines.append("#competitors")
    lines.extend(f"{a},{b}" for a, b in sorted(competitors))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# splits

def firm_split(graph: SupplyGraph, test_fraction: float, seed: int) -> SplitSpec:
    """Firm-level partition; test set size is round(test_fraction * N)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    n = len(graph)
    if n == 0:
        raise ValueError("cannot split an empty graph")
    if test_fraction * n < 1.0:
        raise ValueError("test_fraction * N must be at least 1")
    k = int(np.floor(test_fraction * n + 0.5))
    rng = make_rng(seed, "firm_split")
    test = frozenset(int(i) for i in rng.choice(np.array(graph.ids), size=k, replace=False))
    train = frozenset(graph.ids) - test
    train_edges = frozenset((a, b) for a, b in graph.edges if a in train and b in train)
    return SplitSpec(
        train_firms=train,
        test_firms=test,
        train_edges=train_edges,
        inductive_pairs=(),
        fully_inductive_pairs=(),
        seed=seed,
    )


def partition_test_links(
    graph: SupplyGraph, split: SplitSpec
) -> tuple[tuple[Edge, ...], tuple[Edge, ...]]:
    """Split true edges into (exactly one endpoint unseen, both endpoints unseen)."""
    inductive: list[Edge] = []
    fully: list[Edge] = []
    for a, b in sorted(graph.edges):
        a_test = a in split.test_firms
        b_test = b in split.test_firms
        if a_test and b_test:
            fully.append((a, b))
        elif a_test or b_test:
            inductive.append((a, b))
    return tuple(inductive), tuple(fully)


def _endpoint_pools(
    graph: SupplyGraph, rule: str, split: SplitSpec | None
) -> tuple[list[tuple[np.ndarray, np.ndarray]], bool]:
    """Candidate (source pool, target pool) blocks for a membership rule.

    Returns (blocks, ordered). Unordered rules canonicalize a < b downstream.
    """
    all_ids = np.array(graph.ids, dtype=np.int64)
    if rule == "any":
        return [(all_ids, all_ids)], True
    if rule == "any_unordered":
        return [(all_ids, all_ids)], False
    if split is None:
        raise ValueError(f"rule {rule!r} requires a split")
    train = np.array(sorted(split.train_firms), dtype=np.int64)
    test = np.array(sorted(split.test_firms), dtype=np.int64)
    if rule == "train":
        return [(train, train)], True
    if rule == "fully_inductive":
        return [(test, test)], True
    if rule == "inductive":
        return [(train, test), (test, train)], True
    raise ValueError(f"unknown membership rule {rule!r}")


def _candidate_codes(
    blocks: list[tuple[np.ndarray, np.ndarray]], n_code: int, ordered: bool
) -> np.ndarray:
    chunks = []
    for src, dst in blocks:
        a = np.repeat(src, len(dst))
        b = np.tile(dst, len(src))
        keep = a != b
        if not ordered:
            keep &= a < b
        chunks.append(a[keep] * n_code + b[keep])
    codes = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return np.unique(codes)


def sample_pairs(
    graph: SupplyGraph,
    count: int,
    rule: str,
    seed: int,
    split: SplitSpec | None = None,
    forbidden: frozenset[Edge] | None = None,
) -> tuple[Edge, ...]:
    """Draw ``count`` distinct pairs under a membership rule, avoiding ``forbidden``.

    Deterministic per seed. Unordered rules return canonical (min, max) pairs.
    """
    if count == 0:
        return ()
    if forbidden is None:
        forbidden = graph.edges
    blocks, ordered = _endpoint_pools(graph, rule, split)
    n_code = (max(graph.ids) if graph.ids else 0) + 1
    codes = _candidate_codes(blocks, n_code, ordered)
    if not ordered:
        bad = np.array(
            sorted({(min(a, b) * n_code + max(a, b)) for a, b in forbidden}), dtype=np.int64
        )
    else:
        bad = np.array(sorted({a * n_code + b for a, b in forbidden}), dtype=np.int64)
    if bad.size:
        codes = codes[~np.isin(codes, bad)]
    if codes.size < count:
        raise SamplingExhaustedError(
            f"need {count} pairs under rule {rule!r}, only {codes.size} candidates exist"
        )
    rng = make_rng(seed, "sample_pairs", rule)
    chosen = rng.choice(codes, size=count, replace=False)
    return tuple((int(c) // n_code, int(c) % n_code) for c in chosen)


def sample_negatives(
    graph: SupplyGraph,
    positives: tuple[Edge, ...] | list[Edge],
    rule: str,
    seed: int,
    split: SplitSpec | None = None,
) -> tuple[Edge, ...]:
    """One negative (non-edge) per positive, same endpoint-membership rule."""
    return sample_pairs(graph, len(positives), rule, seed, split=split)


def build_eval_split(graph: SupplyGraph, test_fraction: float, seed: int) -> SplitSpec:
    """Firm split plus class-balanced labeled inductive / fully-inductive pair sets."""
    split = firm_split(graph, test_fraction, seed)
    ind_pos, full_pos = partition_test_links(graph, split)
    ind_neg = sample_negatives(graph, ind_pos, "inductive", mix_seed(seed, "ind_neg"), split)
    full_neg = sample_negatives(
        graph, full_pos, "fully_inductive", mix_seed(seed, "full_neg"), split
    )
    label = lambda pairs, y: tuple((a, b, y) for a, b in pairs)
    return replace(
        split,
        inductive_pairs=label(ind_pos, True) + label(ind_neg, False),
        fully_inductive_pairs=label(full_pos, True) + label(full_neg, False),
    )


def save_split(split: SplitSpec, path: str | Path) -> None:
    lines = [f"#meta seed={split.seed}"]
    lines.append("#train_firms")
    lines.extend(str(i) for i in sorted(split.train_firms))
    lines.append("#test_firms")
    lines.extend(str(i) for i in sorted(split.test_firms))
    lines.append("#train_edges")
    lines.extend(f"{a},{b}" for a, b in sorted(split.train_edges))
    lines.append("#inductive_pairs")
    lines.extend(f"{a},{b},{int(y)}" for a, b, y in split.inductive_pairs)
    lines.append("#fully_inductive_pairs")
    lines.extend(f"{a},{b},{int(y)}" for a, b, y in split.fully_inductive_pairs)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> SplitSpec:
    seed = None
    sections: dict[str, list[str]] = {
        "#train_firms": [],
        "#test_firms": [],
        "#train_edges": [],
        "#inductive_pairs": [],
        "#fully_inductive_pairs": [],
    }
    section = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#meta"):
            for kv in line.split()[1:]:
                k, _, v = kv.partition("=")
                if k == "seed":
                    seed = int(v)
            continue
        if line.startswith("#"):
            if line not in sections:
                raise WorldParseError(f"line {lineno}: unknown section {line!r}")
            section = line
            continue
        if section is None:
            raise WorldParseError(f"line {lineno}: data before any section header")
        sections[section].append(line)
    if seed is None:
        raise WorldParseError("missing '#meta seed=' header")

    def pairs(name: str) -> tuple[Edge, ...]:
        return tuple(_parse_pair_line(l, 0) for l in sections[name])

    def labeled(name: str) -> tuple[LabeledPair, ...]:
        out = []
        for l in sections[name]:
            parts = l.split(",")
            if len(parts) != 3:
                raise WorldParseError(f"bad labeled pair line {l!r}")
            out.append((int(parts[0]), int(parts[1]), bool(int(parts[2]))))
        return tuple(out)

    return SplitSpec(
        train_firms=frozenset(int(l) for l in sections["#train_firms"]),
        test_firms=frozenset(int(l) for l in sections["#test_firms"]),
        train_edges=frozenset(pairs("#train_edges")),
        inductive_pairs=labeled("#inductive_pairs"),
        fully_inductive_pairs=labeled("#fully_inductive_pairs"),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# subgraph extraction

class EdgeView:
    """Adjacency index over a fixed edge set, for repeated ego extractions."""

    def __init__(self, edges: frozenset[Edge]):
        self.edges = frozenset(edges)
        nbrs: dict[int, set[int]] = {}
        for a, b in self.edges:
            nbrs.setdefault(a, set()).add(b)
            nbrs.setdefault(b, set()).add(a)
        self._nbrs = {i: tuple(sorted(s)) for i, s in nbrs.items()}

    def neighbors(self, firm_id: int) -> tuple[int, ...]:
        return self._nbrs.get(firm_id, ())


def ego_subgraph(
    graph: SupplyGraph,
    center: int,
    visible_edges: frozenset[Edge] | EdgeView | None = None,
    cap: int = NEIGHBOR_CAP,
    seed: int = 0,
    exclude: frozenset[int] | tuple[int, ...] = (),
) -> Subgraph:
    """Center plus 1-hop neighborhood under ``visible_edges``, capped at ``cap``.

    Neighbors are the union of in- and out-neighbors, ascending; when the
    degree exceeds ``cap`` a seeded uniform subset is kept. Firms in
    ``exclude`` are dropped from the neighborhood.
    """
    if center not in graph.companies:
        raise KeyError(f"unknown firm id {center}")
    if visible_edges is None:
        visible_edges = graph.edges
    view = visible_edges if isinstance(visible_edges, EdgeView) else EdgeView(visible_edges)
    dropped = set(exclude) | {center}
    nbrs = [n for n in view.neighbors(center) if n not in dropped]
    if len(nbrs) > cap:
        rng = make_rng(seed, "ego", center)
        nbrs = sorted(int(i) for i in rng.choice(np.array(nbrs, dtype=np.int64), cap, replace=False))
    members = (center, *nbrs)
    member_set = set(members)
    local = frozenset(
        (a, b)
        for a in members
        for b in view.neighbors(a)
        if b in member_set and (a, b) in view.edges
    )
    return Subgraph(center=center, members=members, local_edges=local)
