"""Assemble a Program from a corpus directory.

A corpus is a directory holding ``privflow.manifest.json`` plus the MiniSrv
sources (``*.msv``) and/or facts files (``*.facts.jsonl``) each service
declares. Supplied and frontend-derived channels are merged; a duplicate
channel for the same element is an ingest error.
"""

from __future__ import annotations

from pathlib import Path

from .facts import MANIFEST_FILENAME, read_facts, read_manifest
from .minisrv import lower, parse_source
from .model import Channel, Edge, Element, Program, Service


class LoadError(Exception):
    pass


def load_program(root: str | Path) -> Program:
    root = Path(root)
    manifest = read_manifest(root / MANIFEST_FILENAME)
    services = [_load_service(root, spec) for spec in manifest.services]
    return Program(services=tuple(services), manifest=manifest)


def _load_service(root: Path, spec) -> Service:
    elements: list[Element] = []
    ids: set[str] = set()
    edges: list[Edge] = []
    channels: list[Channel] = []
    channel_elements: set[str] = set()

    def merge(part: Service, origin: str) -> None:
        for el in part.elements:
            if el.id in ids:
                raise LoadError(f"{spec.name}: duplicate element id {el.id} while merging {origin}")
            ids.add(el.id)
            elements.append(el)
        edges.extend(part.edges)
        for ch in part.channels:
            if ch.element in channel_elements:
                raise LoadError(f"{spec.name}: duplicate channel for element {ch.element} in {origin}")
            channel_elements.add(ch.element)
            channels.append(ch)

    for source_file in spec.sources:
        path = root / source_file
        if not path.exists():
            raise LoadError(f"{spec.name}: source file {path} does not exist")
        text = path.read_text(encoding="utf-8")
        ast = parse_source(text, spec.name, source_file)
        merge(lower(ast, spec.name), source_file)

    for facts_file in spec.facts:
        path = root / facts_file
        if not path.exists():
            raise LoadError(f"{spec.name}: facts file {path} does not exist")
        merge(read_facts(path.read_text(encoding="utf-8"), spec.name), facts_file)

    return Service.build(spec.name, elements, edges, channels, entry=spec.entry)
