"""Deterministic synthetic corporate worlds with planted industry structure.

Firms get an industry, a region, and a fixed-length description made of the
industry's template tokens plus firm-unique salt tokens, so descriptions
carry a recoverable industry signal while staying firm-discriminative.
Directed supply edges are drawn with weight compat[ind(a)][ind(b)]; the
total edge count is exact (round(n_firms * mean_out_degree)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Company, Edge, SupplyGraph
from .rng import make_rng

REGIONS = ("NA", "EU", "APAC", "LATAM", "MEA")

_SECTOR_WORDS = (
    "Industrial", "Consumer", "Precision", "Marine", "Agricultural",
    "Digital", "Thermal", "Structural", "Medical", "Automotive",
    "Chemical", "Optical", "Polymer", "Mineral", "Aerospace",
)
_PRODUCT_WORDS = (
    "Machinery", "Electronics", "Components", "Logistics", "Textiles",
    "Instruments", "Alloys", "Packaging", "Semiconductors", "Fasteners",
    "Coatings", "Sensors", "Turbines", "Adhesives", "Bearings",
)
_SUFFIX_WORDS = ("and Equipment", "and Supplies", "and Services", "")

_NAME_HEADS = (
    "Vel", "Zor", "Kal", "Mer", "Tor", "Nex", "Ald", "Bru", "Cor", "Dex",
    "Fen", "Gor", "Hel", "Jun", "Lor", "Mag", "Nor", "Oph", "Pel", "Qar",
    "Ril", "Sol", "Tan", "Ursa", "Vex", "Wex", "Xan", "Yor", "Zel", "Ark",
)
_NAME_TAILS = ("cor", "dyn", "tek", "vale", "mont", "gate", "forge", "line", "mark", "strom")
_NAME_SUFFIXES = ("-Corp", "-Inc", "-Group", "-Works", "-Industries", "-Holdings")


class WorldConfigError(ValueError):
    pass


def default_compat(n_industries: int) -> np.ndarray:
    """Supply-link propensity: strong within industry, moderate along a
    supplier chain (i supplies i+1), faint background elsewhere."""
    m = np.full((n_industries, n_industries), 0.02)
    for i in range(n_industries):
        m[i, i] = 0.85
        m[i, (i + 1) % n_industries] = 0.30
    return m


@dataclass
class WorldConfig:
    n_firms: int = 300
    n_industries: int = 10
    compat: np.ndarray | None = None
    mean_out_degree: float = 3.6
    competitor_within_industry_rate: float = 0.5
    desc_template_tokens: int = 16
    desc_salt_tokens: int = 6
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_firms < 2:
            raise WorldConfigError("n_firms must be at least 2")
        if self.n_industries < 1:
            raise WorldConfigError("n_industries must be positive")
        if not 0 < self.mean_out_degree < self.n_firms:
            raise WorldConfigError("mean_out_degree must be in (0, n_firms)")
        if not 0.0 <= self.competitor_within_industry_rate <= 1.0:
            raise WorldConfigError("competitor_within_industry_rate must be in [0,1]")
        if self.desc_salt_tokens >= self.desc_template_tokens:
            raise WorldConfigError("salt tokens must leave room for template tokens")
        if self.compat is None:
            self.compat = default_compat(self.n_industries)
        else:
            self.compat = np.asarray(self.compat, dtype=np.float64)
        if self.compat.shape != (self.n_industries, self.n_industries):
            raise WorldConfigError("compat must be n_industries x n_industries")
        if np.any(self.compat < 0) or np.any(self.compat > 1):
            raise WorldConfigError("compat entries must lie in [0,1]")

    @property
    def template_len(self) -> int:
        return self.desc_template_tokens - self.desc_salt_tokens


def industry_names(n: int, seed: int) -> tuple[str, ...]:
    """Distinct multi-word industry category names."""
    rng = make_rng(seed, "industries")
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n:
        s = _SECTOR_WORDS[int(rng.integers(len(_SECTOR_WORDS)))]
        p = _PRODUCT_WORDS[int(rng.integers(len(_PRODUCT_WORDS)))]
        x = _SUFFIX_WORDS[int(rng.integers(len(_SUFFIX_WORDS)))]
        name = f"{s} {p} {x}".strip()
        if name not in seen:
            seen.add(name)
            names.append(name)
    return tuple(names)


def firm_names(n: int, seed: int) -> tuple[str, ...]:
    """Distinct single-token firm names (no whitespace)."""
    rng = make_rng(seed, "names")
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n:
        head = _NAME_HEADS[int(rng.integers(len(_NAME_HEADS)))]
        tail = _NAME_TAILS[int(rng.integers(len(_NAME_TAILS)))]
        suf = _NAME_SUFFIXES[int(rng.integers(len(_NAME_SUFFIXES)))]
        name = f"{head}{tail}{suf}"
        if name in seen:
            name = f"{head}{tail}{len(names)}{suf}"
        if name not in seen:
            seen.add(name)
            names.append(name)
    return tuple(names)


def _industry_templates(config: WorldConfig) -> list[tuple[int, ...]]:
    """Disjoint fixed token runs, one per industry; ids [0, K*template_len)."""
    t = config.template_len
    return [tuple(range(k * t, (k + 1) * t)) for k in range(config.n_industries)]


def _describe(firm_industry: int, firm_id: int, config: WorldConfig) -> tuple[int, ...]:
    """Fixed-length description: industry template tokens then firm salt tokens."""
    template = _industry_templates(config)[firm_industry]
    salt_base = config.n_industries * config.template_len
    salt_pool = max(4 * config.n_firms, 64)
    rng = make_rng(config.seed, "salt", firm_id)
    salt = tuple(salt_base + int(x) for x in rng.integers(salt_pool, size=config.desc_salt_tokens))
    return template + salt


def describe(firm: Company, config: WorldConfig) -> tuple[int, ...]:
    """Regenerate a firm's description; identical across calls for a fixed config."""
    ind_names = industry_names(config.n_industries, config.seed)
    industry = ind_names.index(firm.sic_label)
    return _describe(industry, firm.id, config)


def description_token_space(config: WorldConfig) -> int:
    """Exclusive upper bound on description token ids this config can emit."""
    return config.n_industries * config.template_len + max(4 * config.n_firms, 64)


def _sample_edges(config: WorldConfig, industry_of: np.ndarray) -> set[Edge]:
    """Exactly round(n_firms * mean_out_degree) directed edges, chosen by
    weighted sampling without replacement over all ordered firm pairs."""
    n = config.n_firms
    target = int(np.floor(n * config.mean_out_degree + 0.5))
    w = config.compat[np.repeat(industry_of, n), np.tile(industry_of, n)]
    w = w.reshape(n, n).astype(np.float64)
    np.fill_diagonal(w, 0.0)
    w = w.ravel()
    eligible = w > 0
    n_eligible = int(eligible.sum())
    if target == 0 or n_eligible == 0:
        # all-zero propensity yields an empty edge set rather than an error
        return set()
    if n_eligible < target:
        raise WorldConfigError(
            f"degree target needs {target} edges but only {n_eligible} pairs have propensity > 0"
        )
    rng = make_rng(config.seed, "edges")
    # weighted reservoir keys: smallest -log(u)/w win
    u = rng.random(w.shape[0])
    keys = np.full(w.shape[0], np.inf)
    keys[eligible] = -np.log(u[eligible]) / w[eligible]
    chosen = np.argpartition(keys, target - 1)[:target]
    return {(int(c) // n, int(c) % n) for c in chosen}


def _sample_competitors(config: WorldConfig, industry_of: np.ndarray) -> frozenset[Edge]:
    rate = config.competitor_within_industry_rate
    if rate == 0.0:
        return frozenset()
    rng = make_rng(config.seed, "competitors")
    pairs: list[Edge] = []
    for k in range(config.n_industries):
        members = np.flatnonzero(industry_of == k)
        if len(members) < 2:
            continue
        ii, jj = np.triu_indices(len(members), k=1)
        keep = rng.random(len(ii)) < rate
        pairs.extend(
            (int(members[i]), int(members[j])) for i, j in zip(ii[keep], jj[keep])
        )
    return frozenset(pairs)


def generate_world(config: WorldConfig) -> tuple[SupplyGraph, frozenset[Edge]]:
    """Build a fully reproducible world: same config, same bytes on disk."""
    n = config.n_firms
    rng = make_rng(config.seed, "assign")
    industry_of = rng.integers(config.n_industries, size=n)
    # every industry must appear so its label stays learnable
    for k in range(config.n_industries):
        if not np.any(industry_of == k) and k < n:
            industry_of[k] = k
    regions = rng.integers(len(REGIONS), size=n)
    ind_names = industry_names(config.n_industries, config.seed)
    names = firm_names(n, config.seed)
    companies = [
        Company(
            id=i,
            name=names[i],
            description=_describe(int(industry_of[i]), i, config),
            region=REGIONS[int(regions[i])],
            sic_label=ind_names[int(industry_of[i])],
        )
        for i in range(n)
    ]
    edges = _sample_edges(config, industry_of)
    competitors = _sample_competitors(config, industry_of)
    return SupplyGraph(companies, edges), competitors
