"""The four unified code-search primitives and the element property functions.

All operations are pure reads over an immutable Service:

* ``q_name``: identifier lookup, exact or regular-expression;
* ``q_ast``: lookup by element kind;
* ``q_flow``: shortest data-propagation path between two elements;
* ``q_cg``: bidirectional call-graph traversal with a depth bound;
* ``get_location`` / ``get_source`` / ``get_type``: element properties.

``build_flow_graph`` materializes the service's data-flow relation. The
frontend (or an external facts producer) emits def-use edges already
saturated under the propagation rules, so the graph is their closure by
construction; rebuilding it is idempotent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from .model import EdgeKind, Element, ElementKind, Location, Service


class BadPattern(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class UnknownElement(Exception):
    pass


class NotAFunction(Exception):
    pass


class NameMode:
    EXACT = "exact"
    REGEX = "regex"


def _loc_key(e: Element) -> tuple:
    return (e.location.file, e.location.line, e.location.col, e.kind.value, e.id)


def q_name(service: Service, pattern: str, mode: str = NameMode.EXACT) -> list[Element]:
    """All elements whose name matches; anonymous elements never match."""
    if not pattern:
        raise BadPattern("empty pattern")
    if mode == NameMode.EXACT:
        hits = [e for e in service.elements if e.name and e.name == pattern]
    elif mode == NameMode.REGEX:
        try:
            rx = re.compile(pattern)
        except re.error as exc:
            raise BadPattern(f"invalid regex {pattern!r}: {exc}")
        hits = [e for e in service.elements if e.name and rx.fullmatch(e.name)]
    else:
        raise BadPattern(f"unknown name mode {mode!r}")
    return sorted(hits, key=_loc_key)


def q_ast(service: Service, opkind: ElementKind | str) -> list[Element]:
    """All elements of one syntactic kind, in source order."""
    kind = ElementKind(opkind)
    return sorted((e for e in service.elements if e.kind is kind), key=_loc_key)


@dataclass(frozen=True)
class FlowGraph:
    """Directed data-flow relation over element ids."""

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        succ: dict[str, list[str]] = {}
        for src, dst in self.edges:
            succ.setdefault(src, []).append(dst)
        for lst in succ.values():
            lst.sort()
        object.__setattr__(self, "_succ", succ)

    def successors(self, node: str) -> list[str]:
        return self._succ.get(node, [])


@lru_cache(maxsize=256)
def build_flow_graph(service: Service) -> FlowGraph:
    """Data-flow graph of a service; memoized on the immutable Service."""
    edges = frozenset((e.src, e.dst) for e in service.edges if e.kind is EdgeKind.DATAFLOW)
    return FlowGraph(nodes=frozenset(e.id for e in service.elements), edges=edges)


@dataclass(frozen=True)
class FlowHop:
    edge: tuple[str, str]


@dataclass(frozen=True)
class FlowPath:
    """A data propagation witness: element ids plus the edge behind each hop."""

    service: str
    elements: tuple[str, ...]
    hops: tuple[FlowHop, ...]

    def __post_init__(self) -> None:
        if len(self.elements) < 1:
            raise ValueError("FlowPath needs at least one element")
        if len(self.hops) != len(self.elements) - 1:
            raise ValueError("FlowPath hops must connect consecutive elements")

    @property
    def src(self) -> str:
        return self.elements[0]

    @property
    def dst(self) -> str:
        return self.elements[-1]


def resolve_selector(service: Service, selector: str) -> list[Element]:
    """Resolve an element selector (id or name) to matching elements."""
    el = service.element(selector)
    if el is not None:
        return [el]
    hits = [e for e in service.elements if e.name and e.name == selector]
    if not hits:
        raise UnknownElement(f"{service.name}: no element matches selector {selector!r}")
    return sorted(hits, key=_loc_key)


def _shortest_path(graph: FlowGraph, src: str, dst: str, order: dict[str, tuple]) -> list[str] | None:
    """BFS shortest path; neighbor ties broken by source position."""
    if src == dst:
        return [src]
    prev: dict[str, str] = {}
    frontier = [src]
    seen = {src}
    while frontier:
        nxt: list[str] = []
        for node in frontier:
            for succ in sorted(graph.successors(node), key=lambda n: order.get(n, ((), n))):
                if succ in seen:
                    continue
                seen.add(succ)
                prev[succ] = node
                if succ == dst:
                    path = [dst]
                    while path[-1] != src:
                        path.append(prev[path[-1]])
                    return list(reversed(path))
                nxt.append(succ)
        frontier = nxt
    return None


def _flow_nodes(service: Service, el: Element) -> list[Element]:
    """Data-flow proxies for a selector hit. Functions are not flow nodes
    themselves; flow into or out of a function is flow through its call
    sites and parameters."""
    if el.kind is not ElementKind.FUNCTION:
        return [el]
    proxies = list(call_sites_of(service, el.id))
    for e in service.edges:
        if e.kind is EdgeKind.CONTAINS and e.src == el.id:
            child = service.element(e.dst)
            if child is not None and child.kind is ElementKind.PARAMETER:
                proxies.append(child)
    return sorted(proxies, key=_loc_key)


def q_flow(service: Service, from_sel: str, to_sel: str) -> list[FlowPath]:
    """Shortest data-flow path for every (source, sink) selector pair.

    Unreachable pairs contribute nothing; an empty list means no flow.
    """
    sources = [n for el in resolve_selector(service, from_sel) for n in _flow_nodes(service, el)]
    sinks = [n for el in resolve_selector(service, to_sel) for n in _flow_nodes(service, el)]
    graph = build_flow_graph(service)
    order = {e.id: ((e.location.line, e.location.col), e.id) for e in service.elements}
    paths: list[FlowPath] = []
    seen_pairs: set[tuple[str, str]] = set()
    for src in sources:
        for dst in sinks:
            if (src.id, dst.id) in seen_pairs:
                continue
            seen_pairs.add((src.id, dst.id))
            chain = _shortest_path(graph, src.id, dst.id, order)
            if chain is None:
                continue
            hops = tuple(FlowHop((a, b)) for a, b in zip(chain, chain[1:]))
            paths.append(FlowPath(service.name, tuple(chain), hops))
    return paths


# --- call graph --------------------------------------------------------------


@lru_cache(maxsize=256)
def _containment_parent(service: Service) -> dict:
    parents: dict[str, str] = {}
    for e in service.edges:
        if e.kind is EdgeKind.CONTAINS:
            parents[e.dst] = e.src
    return parents


def enclosing_function(service: Service, eid: str) -> Element | None:
    """The function an element belongs to. Decorators resolve through the
    function they decorate."""
    el = service.element(eid)
    if el is None:
        return None
    if el.kind is ElementKind.FUNCTION:
        return el
    if el.kind is ElementKind.DECORATOR:
        for e in service.edges:
            if e.kind is EdgeKind.DECORATES and e.src == eid:
                return service.element(e.dst)
        return None
    parents = _containment_parent(service)
    cur = eid
    for _ in range(len(parents) + 1):
        parent = parents.get(cur)
        if parent is None:
            return None
        pel = service.element(parent)
        if pel is not None and pel.kind is ElementKind.FUNCTION:
            return pel
        cur = parent
    return None


@lru_cache(maxsize=256)
def function_call_graph(service: Service) -> tuple[dict, dict]:
    """(callees, callers) maps between function element ids."""
    callees: dict[str, set[str]] = {}
    callers: dict[str, set[str]] = {}
    for e in service.edges:
        if e.kind is not EdgeKind.CALLS:
            continue
        target = service.element(e.dst)
        if target is None or target.kind is not ElementKind.FUNCTION:
            continue
        caller = enclosing_function(service, e.src)
        if caller is None:
            continue
        callees.setdefault(caller.id, set()).add(target.id)
        callers.setdefault(target.id, set()).add(caller.id)
    return callees, callers


def call_sites_of(service: Service, function_id: str) -> list[Element]:
    """Call elements whose resolved callee is the given function."""
    sites = [
        service.element(e.src)
        for e in service.edges
        if e.kind is EdgeKind.CALLS and e.dst == function_id
    ]
    return sorted(
        (s for s in sites if s is not None and s.kind is ElementKind.CALL),
        key=_loc_key,
    )


def q_cg(service: Service, function: str, direction: str, depth: int = 1) -> list[Element]:
    """Functions reachable within ``depth`` call hops, callers or callees."""
    if direction not in ("callers", "callees"):
        raise ValueError(f"direction must be callers|callees, got {direction!r}")
    if depth < 1:
        raise ValueError("depth must be positive")
    starts = resolve_selector(service, function)
    for el in starts:
        if el.kind is not ElementKind.FUNCTION:
            raise NotAFunction(f"{el.name or el.id} is {el.kind.value}, not a function")
    callees, callers = function_call_graph(service)
    step = callees if direction == "callees" else callers
    frontier = {el.id for el in starts}
    reached: set[str] = set()
    for _ in range(depth):
        nxt: set[str] = set()
        for node in frontier:
            nxt.update(step.get(node, ()))
        nxt -= reached
        reached.update(nxt)
        frontier = nxt
        if not frontier:
            break
    reached -= {el.id for el in starts}
    found = [service.element(eid) for eid in reached]
    return sorted((e for e in found if e is not None), key=_loc_key)


# --- property functions -------------------------------------------------------


def _require(service: Service, element: Element | str) -> Element:
    eid = element.id if isinstance(element, Element) else element
    el = service.element(eid)
    if el is None:
        raise UnknownElement(f"{service.name}: unknown element {eid}")
    return el


def get_location(service: Service, element: Element | str) -> Location:
    return _require(service, element).location


def get_source(service: Service, element: Element | str) -> str:
    return _require(service, element).source


def get_type(service: Service, element: Element | str) -> str:
    """Type tag of the element; for variables, the type inferred from the
    last literal or intrinsic flowing into them."""
    return _require(service, element).inferred_type


__all__ = [
    "BadPattern",
    "UnknownElement",
    "NotAFunction",
    "NameMode",
    "FlowGraph",
    "FlowPath",
    "FlowHop",
    "q_name",
    "q_ast",
    "q_flow",
    "q_cg",
    "build_flow_graph",
    "resolve_selector",
    "enclosing_function",
    "function_call_graph",
    "call_sites_of",
    "get_location",
    "get_source",
    "get_type",
]
