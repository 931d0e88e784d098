"""
Nested attribute hierarchies over a finite pattern set.

Attributes get integer ids in depth-first preorder at build time. Augmentation
appends one perfect-test attribute under every original leaf, with ids after
the original ones so test models keyed by id stay valid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from hiertest.core.exception import ConfigError, GuardExceededError, PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.utils.params import get_settings

if TYPE_CHECKING:
    from hiertest.model.strategy import TestModel

logger = setup_logger(name="Hierarchy", log_file_name=get_settings().log_file("hierarchy"))

AttrRef = Union[int, str]


@dataclass(frozen=True)
class Attribute:
    id: int
    name: str
    patterns: frozenset
    parent: Optional[int]
    children: Tuple[int, ...]
    level: int
    perfect: bool = False

    @property
    def scope(self) -> int:
        return len(self.patterns)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class Hierarchy:
    patterns: Tuple[str, ...]
    attributes: Tuple[Attribute, ...]
    roots: Tuple[int, ...]
    augmented: bool = False
    unit_post_cost: float = 1.0
    # origin[i] is the id of attribute i in the hierarchy this one was cut from
    origin: Tuple[int, ...] = ()
    _by_name: Dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.origin:
            object.__setattr__(self, "origin", tuple(range(len(self.attributes))))
        object.__setattr__(self, "_by_name", {a.name: a.id for a in self.attributes})

    def __len__(self) -> int:
        return len(self.attributes)

    def __iter__(self) -> Iterator[Attribute]:
        return iter(self.attributes)

    @property
    def size(self) -> int:
        return len(self.attributes)

    def attribute(self, ref: AttrRef) -> Attribute:
        return self.attributes[self.resolve(ref)]

    def resolve(self, ref: AttrRef) -> int:
        if isinstance(ref, bool):
            raise PreconditionError(f"unknown attribute {ref!r}")
        if isinstance(ref, int):
            if 0 <= ref < len(self.attributes):
                return ref
            raise PreconditionError(f"unknown attribute id {ref}")
        if ref in self._by_name:
            return self._by_name[ref]
        raise PreconditionError(f"unknown attribute {ref!r}")

    def has(self, ref: AttrRef) -> bool:
        try:
            self.resolve(ref)
            return True
        except PreconditionError:
            return False

    def name(self, attr_id: int) -> str:
        return self.attributes[attr_id].name

    def ancestors(self, attr_id: int) -> Tuple[int, ...]:
        """Strict ancestors, nearest first."""
        out = []
        parent = self.attributes[attr_id].parent
        while parent is not None:
            out.append(parent)
            parent = self.attributes[parent].parent
        return tuple(out)

    def descendants(self, attr_id: int) -> Tuple[int, ...]:
        """attr_id and everything below it, depth-first preorder."""
        out: List[int] = []
        stack = [attr_id]
        while stack:
            a = stack.pop()
            out.append(a)
            stack.extend(reversed(self.attributes[a].children))
        return tuple(out)

    def leaves(self) -> Tuple[int, ...]:
        return tuple(a.id for a in self.attributes if a.is_leaf)

    def original_ids(self) -> Tuple[int, ...]:
        return tuple(a.id for a in self.attributes if not a.perfect)

    def perfect_ids(self) -> Tuple[int, ...]:
        return tuple(a.id for a in self.attributes if a.perfect)

    def perfect_for(self, pattern: str) -> int:
        for a in self.attributes:
            if a.perfect and pattern in a.patterns:
                return a.id
        raise PreconditionError(f"no perfect test for pattern {pattern!r}")

    def breadth_first(self) -> Tuple[int, ...]:
        order: List[int] = []
        frontier = list(self.roots)
        while frontier:
            order.extend(frontier)
            frontier = [c for a in frontier for c in self.attributes[a].children]
        return tuple(order)

    def depth_first(self) -> Tuple[int, ...]:
        return tuple(a for r in self.roots for a in self.descendants(r))

    @property
    def depth(self) -> int:
        return max(a.level for a in self.attributes)

    def is_nested(self) -> bool:
        """Every pair of attributes is disjoint or comparable."""
        for a, b in itertools.combinations(self.attributes, 2):
            pa, pb = a.patterns, b.patterns
            if pa & pb and not (pa <= pb or pb <= pa):
                return False
        return True

    def filtered(self, zero_attrs: Iterable[int]) -> frozenset:
        """Patterns not ruled out by the attributes answered 0."""
        ruled_out = set()
        for a in zero_attrs:
            ruled_out |= self.attributes[a].patterns
        return frozenset(p for p in self.patterns if p not in ruled_out)

    def to_config(self) -> dict:
        def node(a: Attribute) -> dict:
            out: dict = {"id": a.name}
            kids = [c for c in a.children if not self.attributes[c].perfect]
            if kids:
                out["children"] = [node(self.attributes[c]) for c in kids]
            return out

        trees = [node(self.attributes[r]) for r in self.roots]
        return {
            "patterns": list(self.patterns),
            "tree": trees[0] if len(trees) == 1 else trees,
            "unit_post_cost": self.unit_post_cost,
        }


@dataclass(frozen=True)
class Covering:
    attributes: frozenset

    @classmethod
    def of(cls, h: Hierarchy, attrs: Iterable[AttrRef]) -> "Covering":
        ids = frozenset(h.resolve(a) for a in attrs)
        covered = set()
        for a in ids:
            covered |= h.attributes[a].patterns
        if covered != set(h.patterns):
            missing = sorted(set(h.patterns) - covered)
            raise PreconditionError("not a covering", detail=f"patterns {missing} uncovered")
        return cls(ids)

    def names(self, h: Hierarchy) -> List[str]:
        return [h.name(a) for a in sorted(self.attributes)]

    def ratio_sum(self, h: Hierarchy, t: "TestModel") -> float:
        return sum(t.ratio(h, a) for a in self.attributes)


# --- construction -------------------------------------------------------------


def build_hierarchy(spec: Any, unit_post_cost: float = 1.0, patterns: Optional[Sequence[str]] = None) -> Hierarchy:
    """
    Build a hierarchy from a nested description.

    `spec` is either a full document `{"patterns": [...], "tree": ..., "unit_post_cost": ...}`,
    a single `{"id": ..., "children": [...]}` tree, or a list of trees (forest).
    Leaf ids name patterns.
    """
    prefix = "tree"
    if isinstance(spec, dict) and "tree" in spec:
        if "patterns" in spec:
            if not isinstance(spec["patterns"], list):
                raise ConfigError("patterns must be an array", field="patterns")
            patterns = [str(p) for p in spec["patterns"]]
        unit_post_cost = spec.get("unit_post_cost", unit_post_cost)
        spec = spec["tree"]
    try:
        unit_post_cost = float(unit_post_cost)
    except (TypeError, ValueError) as exc:
        raise ConfigError("unit_post_cost must be a number", field="unit_post_cost") from exc
    if unit_post_cost < 0:
        raise ConfigError("unit_post_cost must be nonnegative", field="unit_post_cost")

    if patterns is not None:
        seen = set()
        for i, p in enumerate(patterns):
            if p in seen:
                raise ConfigError(f"duplicate pattern id {p!r}", field=f"patterns[{i}]")
            seen.add(p)

    trees = spec if isinstance(spec, list) else [spec]
    if not trees:
        raise ConfigError("hierarchy has no attributes", field=prefix)

    rows: List[dict] = []
    names: Dict[str, str] = {}
    leaf_patterns: List[str] = []
    visited: set = set()

    def visit(node: Any, path: str, parent: Optional[int], level: int) -> int:
        if not isinstance(node, dict):
            raise ConfigError("attribute must be an object with 'id'", field=path)
        if id(node) in visited:
            raise ConfigError("attribute appears twice (not a tree)", field=path)
        visited.add(id(node))
        if "id" not in node:
            raise ConfigError("attribute is missing 'id'", field=f"{path}.id")
        name = str(node["id"])
        if name in names:
            raise ConfigError(f"duplicate attribute id {name!r}", field=f"{path}.id")
        names[name] = path
        children = node.get("children", [])
        if children is None:
            children = []
        if not isinstance(children, list):
            raise ConfigError("children must be an array", field=f"{path}.children")
        idx = len(rows)
        row = {"id": idx, "name": name, "parent": parent, "level": level, "children": [], "patterns": set()}
        rows.append(row)
        if not children:
            if patterns is not None and name not in patterns:
                raise ConfigError(f"leaf {name!r} names no declared pattern (empty attribute)", field=f"{path}.id")
            if name in leaf_patterns:
                raise ConfigError(f"duplicate pattern id {name!r}", field=f"{path}.id")
            leaf_patterns.append(name)
            row["patterns"] = {name}
        for i, child in enumerate(children):
            cid = visit(child, f"{path}.children[{i}]", idx, level + 1)
            row["children"].append(cid)
            row["patterns"] |= rows[cid]["patterns"]
        return idx

    roots = []
    for i, tree in enumerate(trees):
        path = prefix if len(trees) == 1 else f"{prefix}[{i}]"
        roots.append(visit(tree, path, None, 1))

    if patterns is None:
        patterns = list(leaf_patterns)
    else:
        missing = [p for p in patterns if p not in leaf_patterns]
        if missing:
            raise ConfigError(f"patterns {missing} are not leaves of the tree", field="patterns")

    # a forest must partition the pattern set between its roots
    root_sets = [rows[r]["patterns"] for r in roots]
    for a, b in itertools.combinations(root_sets, 2):
        if a & b:
            raise ConfigError("roots overlap", field=prefix)

    attributes = tuple(
        Attribute(
            id=r["id"],
            name=r["name"],
            patterns=frozenset(r["patterns"]),
            parent=r["parent"],
            children=tuple(r["children"]),
            level=r["level"],
        )
        for r in rows
    )
    h = Hierarchy(
        patterns=tuple(patterns),
        attributes=attributes,
        roots=tuple(roots),
        unit_post_cost=unit_post_cost,
    )
    logger.debug("built hierarchy: %d attributes over %d patterns", h.size, len(h.patterns))
    return h


def dyadic(levels: int, unit_post_cost: float = 1.0) -> Hierarchy:
    """Regular binary hierarchy with `levels` levels over 2^(levels-1) patterns."""
    if levels < 1:
        raise ConfigError("dyadic hierarchy needs at least one level", field="dyadic")
    counter = itertools.count(1)

    def node(path: str, level: int) -> dict:
        if level == levels:
            return {"id": f"y{next(counter)}"}
        return {"id": path, "children": [node(f"{path}.{k}", level + 1) for k in (0, 1)]}

    return build_hierarchy(node("A", 1), unit_post_cost=unit_post_cost)


def vine(levels: int, unit_post_cost: float = 1.0) -> Hierarchy:
    """Chain of `levels` nested attributes over a single pattern."""
    if levels < 1:
        raise ConfigError("vine needs at least one level", field="vine")
    tree: dict = {"id": "y1"}
    for k in range(levels - 1, 0, -1):
        tree = {"id": f"A{k}", "children": [tree]}
    return build_hierarchy(tree, unit_post_cost=unit_post_cost)


def augment(h: Hierarchy, c_star: Optional[float] = None) -> Hierarchy:
    """Append one perfect singleton test (power 1, cost c_star) under every original leaf."""
    if h.augmented:
        raise PreconditionError("hierarchy is already augmented")
    c_star = h.unit_post_cost if c_star is None else float(c_star)
    if c_star < 0:
        raise PreconditionError(f"c_star must be nonnegative, got {c_star}")
    attrs = list(h.attributes)
    next_id = len(attrs)
    for leaf in h.leaves():
        a = attrs[leaf]
        (pattern,) = tuple(a.patterns)
        perfect = Attribute(
            id=next_id,
            name=f"{a.name}*",
            patterns=a.patterns,
            parent=a.id,
            children=(),
            level=a.level + 1,
            perfect=True,
        )
        attrs[leaf] = replace(a, children=(next_id,))
        attrs.append(perfect)
        next_id += 1
    return Hierarchy(
        patterns=h.patterns,
        attributes=tuple(attrs),
        roots=h.roots,
        augmented=True,
        unit_post_cost=c_star,
    )


def subhierarchy(h: Hierarchy, b: AttrRef) -> Hierarchy:
    """All attributes contained in b, re-indexed in depth-first order."""
    root = h.resolve(b)
    return _restrict(h, [root])


def forest(h: Hierarchy, roots: Iterable[AttrRef]) -> Hierarchy:
    """Finite union of disjoint subhierarchies."""
    return _restrict(h, [h.resolve(r) for r in roots])


def _restrict(h: Hierarchy, roots: Sequence[int]) -> Hierarchy:
    keep: List[int] = [a for r in roots for a in h.descendants(r)]
    base = {a: h.attributes[r].level for r in roots for a in h.descendants(r)}
    remap = {old: new for new, old in enumerate(keep)}
    span = set()
    for r in roots:
        span |= h.attributes[r].patterns
    attrs = []
    for old in keep:
        a = h.attributes[old]
        attrs.append(Attribute(
            id=remap[old],
            name=a.name,
            patterns=a.patterns,
            parent=remap.get(a.parent) if a.parent is not None else None,
            children=tuple(remap[c] for c in a.children),
            level=a.level - base[old] + 1,
            perfect=a.perfect,
        ))
    return Hierarchy(
        patterns=tuple(p for p in h.patterns if p in span),
        attributes=tuple(attrs),
        roots=tuple(remap[r] for r in roots),
        augmented=h.augmented,
        unit_post_cost=h.unit_post_cost,
        origin=tuple(h.origin[old] for old in keep),
    )


# --- coverings -----------------------------------------------------------------


def enumerate_coverings(h: Hierarchy, limit: Optional[int] = None) -> List[Covering]:
    """Antichain coverings (each pattern covered exactly once), deterministic order."""
    limit = get_settings().guards.coverings if limit is None else limit
    if h.size > limit:
        raise GuardExceededError("covering enumeration", h.size, limit)

    def below(a: int) -> List[Tuple[int, ...]]:
        out: List[Tuple[int, ...]] = [(a,)]
        kids = h.attributes[a].children
        if kids:
            for combo in itertools.product(*(below(c) for c in kids)):
                out.append(tuple(x for part in combo for x in part))
        return out

    combos = itertools.product(*(below(r) for r in h.roots))
    return [Covering(frozenset(x for part in combo for x in part)) for combo in combos]


def min_covering_ratio(h: Hierarchy, t: "TestModel") -> Tuple[float, Covering]:
    """
    inf over coverings of the sum of c(A)/beta(A), with one attaining covering.

    best(A) = min(c(A)/beta(A), sum of best(child)); ties go to the coarser attribute.
    """
    for a in h.attributes:
        if t.power(h, a.id) <= 0.0:
            raise PreconditionError(f"beta(A) = 0 for attribute {a.name!r}: ratio undefined")

    def best(a: int) -> Tuple[float, Tuple[int, ...]]:
        own = t.ratio(h, a)
        kids = h.attributes[a].children
        if not kids:
            return own, (a,)
        parts = [best(c) for c in kids]
        below = sum(v for v, _ in parts)
        if own <= below:
            return own, (a,)
        return below, tuple(x for _, ids in parts for x in ids)

    total = 0.0
    chosen: List[int] = []
    for r in h.roots:
        v, ids = best(r)
        total += v
        chosen.extend(ids)
    return total, Covering(frozenset(chosen))
