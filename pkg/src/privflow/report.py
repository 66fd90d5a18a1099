"""Report rendering and exit-status policy.

The JSON payload produced by the pipeline is the single source of truth
(schema field pinned at 1); markdown is derived from it, never computed
separately. Reports carry no timestamps so equal scans render byte-identically.
"""

from __future__ import annotations

import json
from enum import IntEnum


class ExitStatus(IntEnum):
    CLEAN = 0
    FINDINGS = 1
    CONFIG_ERROR = 2
    BUDGET_EXHAUSTED = 3


def exit_status(payload: dict) -> ExitStatus:
    if payload.get("budget", {}).get("exhausted"):
        return ExitStatus.BUDGET_EXHAUSTED
    if payload.get("findings"):
        return ExitStatus.FINDINGS
    return ExitStatus.CLEAN


def render_report(payload: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt == "md":
        return _render_md(payload)
    raise ValueError(f"unknown report format {fmt!r}")


def _render_md(payload: dict) -> str:
    lines: list[str] = []
    out = lines.append

    out("# privflow scan report")
    out("")
    program = payload.get("program", {})
    out(f"Entry service: `{program.get('entry_service')}`; reasoner: {payload.get('reasoner')}")
    out("")
    out("| service | elements | edges | channels |")
    out("|---|---|---|---|")
    for svc in program.get("services", []):
        marker = " (entry)" if svc.get("entry") else ""
        out(f"| {svc['name']}{marker} | {svc['elements']} | {svc['edges']} | {svc['channels']} |")
    out("")

    ops = payload.get("privileged_operations", [])
    out(f"## Privileged operations ({len(ops)})")
    out("")
    for op in ops:
        out(f"- `{op['name'] or op['source']}` [{op['category']}] at {op['file']}:{op['line']} in {op['service']}: {op['rationale']}")
    out("")

    funnel = payload.get("funnel", {})
    out("## Funnel")
    out("")
    out(
        f"{funnel.get('initial_flows', 0)} initial flows: "
        f"{funnel.get('constraint_pruned', 0)} constraint-pruned, "
        f"{funnel.get('protected_dropped', 0)} protected-dropped, "
        f"{funnel.get('budget_truncated', 0)} budget-truncated, "
        f"{funnel.get('findings', 0)} findings."
    )
    out("")

    findings = payload.get("findings", [])
    out(f"## Findings ({len(findings)})")
    for i, finding in enumerate(findings, start=1):
        op = finding["privileged_operation"]
        out("")
        out(f"### {i}. {finding['verdict']}: {op['name'] or op['source']} ({op['service']})")
        out("")
        out(f"- Category: {op['category']}")
        out(f"- Location: {op['file']}:{op['line']}")
        out(f"- Feasibility: {finding['feasibility']} (constraints: {finding['constraint']['status']})")
        out(f"- Rationale: {finding['rationale']}")
        out("- Path:")
        for hop in finding["path"]["hops"]:
            if hop["type"] == "flow":
                steps = " -> ".join(step["name"] or step["kind"] for step in hop["steps"])
                out(f"  - [{hop['service']}] {steps}")
            else:
                out(
                    f"  - => channel \"{hop['identifier']}\" ({hop['match']}) "
                    f"{hop['from_service']} to {hop['to_service']}"
                )
        checks = finding.get("checks", [])
        if checks:
            out("- Checks found on path:")
            for c in checks:
                label = c["name"] or "inline conditional"
                subtype = f"/{c['authz_subtype']}" if c["classification"] == "authz" else ""
                out(f"  - {c['attachment']} `{label}`: {c['classification']}{subtype}: {c['rationale']}")
        else:
            out("- Checks found on path: none")
        out(f"- Evidence snippets: {len(finding.get('evidence', []))}")
    out("")

    channels = payload.get("channels", {})
    unresolved = channels.get("unresolved", [])
    ambiguous = channels.get("ambiguous", [])
    if unresolved or ambiguous:
        out("## Diagnostics")
        out("")
        for u in unresolved:
            out(f"- unresolved channel: {u}")
        for a in ambiguous:
            out(f"- ambiguous channel match from element {a}")
        out("")

    budget = payload.get("budget", {})
    calls = ", ".join(f"{k}={v}" for k, v in sorted(budget.get("tool_calls", {}).items()))
    out(f"Budget: {calls or 'no tool calls'}; exhausted: {budget.get('exhausted', False)}")
    return "\n".join(lines) + "\n"
