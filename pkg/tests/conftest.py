import json
from pathlib import Path

import pytest

from privflow.load import load_program
from privflow.minisrv import lower, parse_source
from privflow.model import (
    Channel,
    Edge,
    EdgeKind,
    Element,
    ElementKind,
    GatewayRoute,
    Location,
    Manifest,
    ManifestService,
    Program,
    Service,
    element_id,
)
from privflow.reasoner import ScriptedOracle

CORPORA = Path(__file__).parent / "corpora"


@pytest.fixture(scope="session")
def corpora_root() -> Path:
    return CORPORA


@pytest.fixture(scope="session")
def bench_spec() -> dict:
    return json.loads((CORPORA / "bench.json").read_text())


@pytest.fixture(scope="session")
def oracle() -> ScriptedOracle:
    return ScriptedOracle()


@pytest.fixture(scope="session")
def role_update_program() -> Program:
    return load_program(CORPORA / "role_update")


@pytest.fixture(scope="session")
def order_payment_program() -> Program:
    return load_program(CORPORA / "order_payment")


def lower_snippet(text: str, service: str = "svc", file: str = "svc.msv") -> Service:
    """Parse and lower an inline MiniSrv snippet."""
    return lower(parse_source(text, service, file), service)


def make_element(
    service: str,
    kind: ElementKind,
    name: str = "",
    line: int = 1,
    col: int = 1,
    source: str = "",
    itype: str = "unknown",
    file: str = "gen.msv",
) -> Element:
    eid = element_id(service, file, line, col, kind)
    return Element(eid, service, kind, name, Location(file, line, col), source or (name or kind.value), itype)


def build_random_service(rng, name: str = "rand", max_nodes: int = 50) -> Service:
    """A service of variable nodes joined by random def-use edges."""
    n = rng.randint(2, max_nodes)
    elements = [
        make_element(name, ElementKind.VARIABLE, name=f"v{i}", line=i + 1, col=1, source=f"v{i}")
        for i in range(n)
    ]
    edges = []
    max_edges = rng.randint(0, 2 * n)
    for _ in range(max_edges):
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            edges.append(Edge(EdgeKind.DATAFLOW, elements[a].id, elements[b].id))
    return Service.build(name, elements, edges)


def oracle_closure(service: Service) -> dict[str, set[str]]:
    """Independent reflexive-transitive closure of the dataflow relation,
    computed by saturation rather than search."""
    nodes = [e.id for e in service.elements]
    reach = {n: {n} for n in nodes}
    edges = [(e.src, e.dst) for e in service.edges if e.kind is EdgeKind.DATAFLOW]
    changed = True
    while changed:
        changed = False
        for a, b in edges:
            add = reach[b] - reach[a]
            if add:
                reach[a] |= add
                changed = True
    return reach


def build_random_program(rng, tag: str) -> tuple[Program, list]:
    """A random multi-service program with endpoints, outbound channel call
    sites and sink call sites. Returns (program, privileged operations)."""
    from privflow.pipeline import PrivilegedOperation

    n_services = rng.randint(2, 4)
    services = []
    privops = []
    endpoint_paths: dict[str, list[str]] = {}
    for si in range(n_services):
        sname = f"{tag}_s{si}"
        endpoint_paths[sname] = [f"/ep{si}_{j}" for j in range(rng.randint(1, 3))]

    names = sorted(endpoint_paths)
    for si, sname in enumerate(names):
        elements = []
        line = 1
        for path in endpoint_paths[sname]:
            elements.append(
                make_element(sname, ElementKind.ENDPOINT, name=path, line=line, source=f'@route("POST", "{path}")')
            )
            line += 1
        for j in range(rng.randint(1, 5)):
            elements.append(make_element(sname, ElementKind.VARIABLE, name=f"x{j}", line=line, source=f"x{j}"))
            line += 1
        channels = []
        for j in range(rng.randint(0, 3)):
            call = make_element(sname, ElementKind.CALL, line=line, source="http_post(u, b)")
            line += 1
            elements.append(call)
            other = names[rng.randrange(len(names))]
            if other != sname and rng.random() < 0.8:
                target_path = rng.choice(endpoint_paths[other])
                channels.append(Channel(call.id, "out", "http", f"http://{other}:80{target_path}"))
            else:
                channels.append(Channel(call.id, "out", "http", f"/nomatch/{tag}/{si}/{j}"))
        for j in range(rng.randint(0, 2)):
            sink = make_element(sname, ElementKind.CALL, line=line, source="db.write(q)")
            line += 1
            elements.append(sink)
            privops.append(PrivilegedOperation(sink.id, sname, "security-critical-action", "standard sink"))

        edges = []
        n = len(elements)
        for _ in range(rng.randint(n, 3 * n)):
            a, b = rng.randrange(n), rng.randrange(n)
            # endpoints only emit flow; call results may flow onward
            if a != b and elements[b].kind is not ElementKind.ENDPOINT:
                edges.append(Edge(EdgeKind.DATAFLOW, elements[a].id, elements[b].id))
        services.append(Service.build(sname, elements, edges, channels, entry=(si == 0)))

    manifest = Manifest(
        version=1,
        services=tuple(
            ManifestService(name=s.name, entry=s.entry, sources=(f"{s.name}.msv",)) for s in services
        ),
        gateway_routes=(GatewayRoute("/", names[0]),),
    )
    return Program(tuple(services), manifest), privops
