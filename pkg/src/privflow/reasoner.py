"""Pluggable semantic-judgment backends.

Two backends answer the same closed set of reasoning tasks:

* ``ScriptedOracle``: a deterministic, rules-driven stand-in used by the
  whole offline test suite. Identical (rules, task) input produces a
  byte-identical verdict.
* ``RemoteReasoner``: a chat-completion client with schema-validated
  responses, bounded retries, and auditable prompt templates.

Tasks carry only serialized text and facts, never live object references.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import constraints as _constraints

RULES_RESOURCE = Path(__file__).parent / "rules" / "oracle.rules.json"
PROMPTS_DIR = Path(__file__).parent / "prompts"

PRIVILEGED_CATEGORIES = ("sensitive-resource", "security-critical-action", "protected-state")


class RulesError(Exception):
    def __init__(self, rules_field: str, reason: str):
        self.field = rules_field
        self.reason = reason
        super().__init__(f"{rules_field}: {reason}")


class BackendUnavailable(Exception):
    pass


class SchemaViolation(Exception):
    pass


# --- tasks ---------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifyPrivileged:
    element: str
    name: str
    source: str
    context: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClassifyCheck:
    element: str
    name: str
    source: str
    attachment: str = "inline"  # decorator | middleware | inline
    context: tuple[str, ...] = ()


@dataclass(frozen=True)
class CheckDescriptor:
    classification: str
    subtype: str
    name: str
    source: str


@dataclass(frozen=True)
class AssessSufficiency:
    privop_name: str
    privop_source: str
    privop_category: str
    checks: tuple[CheckDescriptor, ...]
    contexts: tuple[str, ...] = ()


@dataclass(frozen=True)
class GuardDescriptor:
    source: str
    var_types: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ExtractConstraints:
    guards: tuple[GuardDescriptor, ...]


@dataclass(frozen=True)
class ConfirmUserSource:
    identifier: str
    route_prefixes: tuple[str, ...]


@dataclass(frozen=True)
class NextSearchAction:
    round: int
    services: tuple[str, ...]
    executed: tuple[str, ...]
    new_ops_this_round: int
    tools: tuple[str, ...]


# --- verdicts ------------------------------------------------------------------


@dataclass(frozen=True)
class PrivilegedClass:
    category: str | None  # one of PRIVILEGED_CATEGORIES, or None
    rationale: str


@dataclass(frozen=True)
class CheckClass:
    classification: str  # authn | authz | none
    authz_subtype: str  # role | permission | ownership | none
    rationale: str


@dataclass(frozen=True)
class Sufficiency:
    verdict: str  # protected | unprotected | missing_authz | insufficient_authz
    rationale: str


@dataclass(frozen=True)
class ConstraintExtraction:
    skipped: bool
    constraint: object | None  # constraints.PathConstraint when not skipped
    rationale: str


@dataclass(frozen=True)
class UserSource:
    is_user_source: bool
    rationale: str


@dataclass(frozen=True)
class Action:
    tool: str  # a proposed search, "new_round", or "finish"
    args: dict
    rationale: str


# --- rules ----------------------------------------------------------------------


@dataclass(frozen=True)
class OracleRules:
    action_verbs: tuple[str, ...]
    protected_state_nouns: tuple[str, ...]
    resource_nouns: tuple[str, ...]
    critical_action_patterns: tuple[str, ...]
    authn_patterns: tuple[str, ...]
    authz_patterns: tuple[str, ...]
    role_keywords: tuple[str, ...]
    permission_keywords: tuple[str, ...]
    ownership_comparisons: tuple[str, ...]
    ownership_nouns: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_critical_rx",
            tuple(re.compile(p, re.IGNORECASE) for p in self.critical_action_patterns),
        )
        object.__setattr__(
            self,
            "_ownership_rx",
            tuple(re.compile(p) for p in self.ownership_comparisons),
        )

    @property
    def critical_rx(self):
        return self._critical_rx

    @property
    def ownership_rx(self):
        return self._ownership_rx


_RULES_FIELDS = {
    "action_verbs": ("privileged", "action_verbs"),
    "protected_state_nouns": ("privileged", "protected_state_nouns"),
    "resource_nouns": ("privileged", "resource_nouns"),
    "critical_action_patterns": ("privileged", "critical_action_patterns"),
    "authn_patterns": ("checks", "authn_patterns"),
    "authz_patterns": ("checks", "authz_patterns"),
    "role_keywords": ("checks", "role_keywords"),
    "permission_keywords": ("checks", "permission_keywords"),
    "ownership_comparisons": ("checks", "ownership_comparisons"),
    "ownership_nouns": ("sufficiency", "ownership_nouns"),
}


def load_rules(file: str | Path | None = None) -> OracleRules:
    """Load and validate oracle rules; defaults ship with the package."""
    path = Path(file) if file is not None else RULES_RESOURCE
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RulesError("file", f"{path} does not exist")
    except json.JSONDecodeError as exc:
        raise RulesError("file", f"invalid JSON: {exc}")

    kwargs: dict[str, tuple[str, ...]] = {}
    for attr, (section, key) in _RULES_FIELDS.items():
        values = raw.get(section, {}).get(key)
        dotted = f"{section}.{key}"
        if not isinstance(values, list) or not values:
            raise RulesError(dotted, "must be a non-empty list")
        if not all(isinstance(v, str) and v for v in values):
            raise RulesError(dotted, "entries must be non-empty strings")
        kwargs[attr] = tuple(values)
    for dotted, patterns in (
        ("privileged.critical_action_patterns", kwargs["critical_action_patterns"]),
        ("checks.ownership_comparisons", kwargs["ownership_comparisons"]),
    ):
        for p in patterns:
            try:
                re.compile(p)
            except re.error as exc:
                raise RulesError(dotted, f"pattern {p!r} does not compile: {exc}")
    return OracleRules(**kwargs)


# --- scripted oracle --------------------------------------------------------------


_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def split_identifier(name: str) -> list[str]:
    """snake_case and camelCase identifier tokens, lowercased."""
    parts: list[str] = []
    for chunk in name.split("_"):
        if chunk:
            parts.extend(p.lower() for p in _CAMEL_RE.split(chunk) if p)
    return parts


def _strip_string_literals(text: str) -> str:
    return re.sub(r'"[^"]*"', '""', text)


class ScriptedOracle:
    """Deterministic keyword- and pattern-driven reasoner."""

    name = "scripted"

    def __init__(self, rules: OracleRules | None = None):
        self.rules = rules or load_rules()

    def reason(self, task):
        if isinstance(task, ClassifyPrivileged):
            return self._classify_privileged(task)
        if isinstance(task, ClassifyCheck):
            return self._classify_check(task)
        if isinstance(task, AssessSufficiency):
            return self._assess(task)
        if isinstance(task, ExtractConstraints):
            return self._extract(task)
        if isinstance(task, ConfirmUserSource):
            return self._confirm_user_source(task)
        if isinstance(task, NextSearchAction):
            return self._next_action(task)
        raise TypeError(f"unsupported task {type(task).__name__}")

    # ClassifyPrivileged: a name pairing an action verb with a protected-state
    # or resource noun, or matching a critical-action pattern, is privileged.
    def _classify_privileged(self, task: ClassifyPrivileged) -> PrivilegedClass:
        name = task.name or _first_identifier(task.source)
        tokens = set(split_identifier(name))
        for rx in self.rules.critical_rx:
            if rx.search(name):
                return PrivilegedClass(
                    "security-critical-action",
                    f"name '{name}' matches critical-action pattern '{rx.pattern}'",
                )
        verbs = tokens & set(self.rules.action_verbs)
        if verbs:
            protected = tokens & set(self.rules.protected_state_nouns)
            if protected:
                return PrivilegedClass(
                    "protected-state",
                    f"name '{name}' pairs action '{sorted(verbs)[0]}' with protected state '{sorted(protected)[0]}'",
                )
            resources = tokens & set(self.rules.resource_nouns)
            if resources:
                return PrivilegedClass(
                    "sensitive-resource",
                    f"name '{name}' pairs action '{sorted(verbs)[0]}' with resource '{sorted(resources)[0]}'",
                )
        return PrivilegedClass(None, f"name '{name}' matches no privileged-operation pattern")

    # Priority: ownership comparisons, then name-level signals (a check's
    # own name is the strongest cue), then body/context-level authorization
    # keywords; body-level authentication cues (session/token reads appear
    # in nearly every check) come last.
    def _classify_check(self, task: ClassifyCheck) -> CheckClass:
        name = task.name
        source = task.source
        corpus = " ".join((name, source) + task.context).lower()

        for rx in self.rules.ownership_rx:
            if rx.search(source) or any(rx.search(c) for c in task.context):
                return CheckClass("authz", "ownership", f"matches ownership comparison '{rx.pattern}'")

        def hit(patterns: tuple[str, ...], haystack: str) -> str | None:
            for p in patterns:
                if p.lower() in haystack:
                    return p
            return None

        name_l = name.lower()
        ladder = (
            (self.rules.authz_patterns, name_l, "authz", None),
            (self.rules.authn_patterns, name_l, "authn", "none"),
            (self.rules.role_keywords, name_l, "authz", "role"),
            (self.rules.permission_keywords, name_l, "authz", "permission"),
            (self.rules.authz_patterns, corpus, "authz", None),
            (self.rules.role_keywords, corpus, "authz", "role"),
            (self.rules.permission_keywords, corpus, "authz", "permission"),
            (self.rules.authn_patterns, corpus, "authn", "none"),
        )
        for patterns, haystack, classification, subtype in ladder:
            pat = hit(patterns, haystack)
            if pat is None:
                continue
            if classification == "authn":
                return CheckClass("authn", "none", f"matches authentication pattern '{pat}'")
            resolved = subtype or self._authz_subtype(corpus)
            return CheckClass("authz", resolved, f"matches authorization pattern '{pat}'")
        return CheckClass("none", "none", "no authentication or authorization pattern matched")

    def _authz_subtype(self, corpus: str) -> str:
        for kw in self.rules.role_keywords:
            if kw.lower() in corpus:
                return "role"
        for kw in self.rules.permission_keywords:
            if kw.lower() in corpus:
                return "permission"
        return "permission"

    # AssessSufficiency: an operation touching a named role/resource argument
    # is protected only by an authz check that references that argument (or
    # proves ownership); authn alone never suffices.
    def _assess(self, task: AssessSufficiency) -> Sufficiency:
        sensitive = self._sensitive_arguments(task.privop_source)
        authz = [c for c in task.checks if c.classification == "authz"]
        authn = [c for c in task.checks if c.classification == "authn"]
        check_text = " ".join(c.source for c in authz) + " " + " ".join(task.contexts)
        has_ownership = any(c.subtype == "ownership" for c in authz) or any(
            rx.search(check_text) for rx in self.rules.ownership_rx
        )

        ownership_note = self._ownership_note(task.privop_source, has_ownership)
        if not task.checks:
            return Sufficiency(
                "unprotected",
                f"no authentication or authorization checks guard '{task.privop_name}'" + ownership_note,
            )
        if not authz:
            return Sufficiency(
                "missing_authz",
                f"only authentication ({', '.join(c.name or c.source for c in authn)}) guards "
                f"'{task.privop_name}'; no authorization check found" + ownership_note,
            )
        if sensitive:
            for arg in sensitive:
                rx = re.compile(rf"\b{re.escape(arg)}\b")
                for c in authz:
                    if rx.search(c.source):
                        return Sufficiency(
                            "protected",
                            f"authorization check '{c.name or 'inline'}' references sensitive argument '{arg}'",
                        )
            if has_ownership:
                return Sufficiency(
                    "protected",
                    f"authorization establishes resource ownership for '{task.privop_name}'",
                )
            args = ", ".join(sorted(sensitive))
            return Sufficiency(
                "insufficient_authz",
                f"authorization check never references sensitive argument(s) {args} of "
                f"'{task.privop_name}'; a general permission is not eligibility for the specific value"
                + ownership_note,
            )
        return Sufficiency(
            "protected",
            f"authorization check '{authz[0].name or 'inline'}' guards '{task.privop_name}'",
        )

    def _sensitive_arguments(self, privop_source: str) -> list[str]:
        paren = privop_source.find("(")
        arg_text = privop_source[paren + 1 :] if paren >= 0 else privop_source
        idents = _IDENT_RE.findall(_strip_string_literals(arg_text))
        nouns = set(self.rules.protected_state_nouns) | set(self.rules.resource_nouns)
        out: list[str] = []
        for ident in idents:
            if ident in out:
                continue
            if set(split_identifier(ident)) & nouns:
                out.append(ident)
        return out

    def _ownership_note(self, privop_source: str, has_ownership: bool) -> str:
        if has_ownership:
            return ""
        tokens: set[str] = set()
        for ident in _IDENT_RE.findall(privop_source.lower()):
            tokens.update(split_identifier(ident))
        owned = sorted(tokens & set(self.rules.ownership_nouns))
        if owned:
            return f"; missing ownership check for resource '{owned[0]}'"
        return ""

    def _extract(self, task: ExtractConstraints) -> ConstraintExtraction:
        constraint, rationale = _constraints.translate_guards(task.guards)
        if constraint is None:
            return ConstraintExtraction(True, None, rationale)
        return ConstraintExtraction(False, constraint, rationale)

    def _confirm_user_source(self, task: ConfirmUserSource) -> UserSource:
        ident = task.identifier
        if not ident.startswith("/"):
            return UserSource(False, f"'{ident}' is not a gateway-routed path")
        for prefix in task.route_prefixes:
            if _path_has_prefix(ident, prefix):
                return UserSource(True, f"'{ident}' is routed by gateway prefix '{prefix}'")
        return UserSource(False, f"no gateway route prefix covers '{ident}'")

    # NextSearchAction: one verb query and one noun query per service per
    # round; a fresh round only while the previous one surfaced new ops.
    def _next_action(self, task: NextSearchAction) -> Action:
        verbs = "|".join(self.rules.action_verbs)
        nouns = "|".join(sorted(set(self.rules.protected_state_nouns) | set(self.rules.resource_nouns)))
        plan: list[tuple[str, dict]] = []
        for service in task.services:
            plan.append(("q_name", {"service": service, "pattern": f"(?i)({verbs}).*", "mode": "regex"}))
            plan.append(("q_name", {"service": service, "pattern": f"(?i).*({nouns}).*", "mode": "regex"}))
        executed = set(task.executed)
        for tool, args in plan:
            key = _query_key(tool, args)
            if key not in executed:
                return Action(tool, args, f"round {task.round}: propose {key}")
        if task.new_ops_this_round > 0:
            return Action("new_round", {}, f"round {task.round} found {task.new_ops_this_round} new ops; search again")
        return Action("finish", {}, f"round {task.round} completed with no new privileged operations")


def _query_key(tool: str, args: dict) -> str:
    return f"{tool}:" + ",".join(f"{k}={args[k]}" for k in sorted(args))


def _first_identifier(source: str) -> str:
    m = _IDENT_RE.search(source)
    return m.group(0) if m else ""


def _path_has_prefix(path: str, prefix: str) -> bool:
    p_segs = [s for s in prefix.split("/") if s]
    segs = [s for s in path.split("/") if s]
    if len(p_segs) > len(segs):
        return False
    return segs[: len(p_segs)] == p_segs


# --- remote backend -----------------------------------------------------------------


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    model: str
    temperature: float = 0.2
    api_key_env: str = "PRIVFLOW_API_KEY"
    max_retries: int = 3
    timeout: float = 60.0
    retry_backoff: float = 0.5  # seconds, grows linearly per attempt


_TASK_PROMPTS = {
    "ClassifyPrivileged": "classify_privileged.md",
    "ClassifyCheck": "classify_check.md",
    "AssessSufficiency": "assess_sufficiency.md",
    "ExtractConstraints": "extract_constraints.md",
    "ConfirmUserSource": "confirm_user_source.md",
    "NextSearchAction": "next_search_action.md",
}


class RemoteReasoner:
    """Chat-completion backend. Responses must match a per-task JSON schema;
    malformed replies are retried up to ``max_retries`` times, then raised as
    SchemaViolation. Requests are serialized per scan."""

    name = "remote"

    def __init__(self, config: RemoteConfig, transport=None):
        self.config = config
        self._transport = transport or _requests_transport
        self._lock = threading.Lock()
        self._system = _load_prompt("system.md")

    def reason(self, task):
        task_name = type(task).__name__
        template_name = _TASK_PROMPTS.get(task_name)
        if template_name is None:
            raise TypeError(f"unsupported task {task_name}")
        prompt = _load_prompt(template_name).replace("{task_json}", json.dumps(_task_payload(task), indent=2))
        last_error = "no attempts made"
        with self._lock:
            for attempt in range(self.config.max_retries):
                if attempt and self.config.retry_backoff:
                    time.sleep(self.config.retry_backoff * attempt)
                reply = self._complete(prompt)
                try:
                    return _parse_verdict(task, reply)
                except (ValueError, KeyError, TypeError) as exc:
                    last_error = str(exc)
        raise SchemaViolation(f"{task_name}: {last_error}")

    def _complete(self, prompt: str) -> str:
        api_key = os.environ.get(self.config.api_key_env, "")
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": self._system},
                {"role": "user", "content": prompt},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        status, body = self._transport(self.config.endpoint, headers, payload, self.config.timeout)
        if status != 200:
            raise BackendUnavailable(f"backend returned HTTP {status}")
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendUnavailable("backend response is not a chat completion")
        return content


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float):
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise BackendUnavailable(str(exc))
    try:
        return resp.status_code, resp.json()
    except ValueError:
        return resp.status_code, {}


def _load_prompt(name: str) -> str:
    return (PROMPTS_DIR / name).read_text(encoding="utf-8")


def _task_payload(task) -> dict:
    from dataclasses import asdict

    payload = asdict(task)
    payload["task"] = type(task).__name__
    return payload


def _extract_json(reply: str) -> dict:
    start = reply.find("{")
    end = reply.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("reply contains no JSON object")
    data = json.loads(reply[start : end + 1])
    if not isinstance(data, dict):
        raise ValueError("reply JSON must be an object")
    return data


def _require_str(data: dict, key: str, allowed: tuple[str, ...] | None = None) -> str:
    value = data.get(key)
    if not isinstance(value, str) or not value:
        raise ValueError(f"field {key!r} must be a non-empty string")
    if allowed is not None and value not in allowed:
        raise ValueError(f"field {key!r} must be one of {allowed}, got {value!r}")
    return value


def _parse_verdict(task, reply: str):
    data = _extract_json(reply)
    rationale = _require_str(data, "rationale")
    if isinstance(task, ClassifyPrivileged):
        category = _require_str(data, "category", PRIVILEGED_CATEGORIES + ("none",))
        return PrivilegedClass(None if category == "none" else category, rationale)
    if isinstance(task, ClassifyCheck):
        classification = _require_str(data, "classification", ("authn", "authz", "none"))
        subtype = _require_str(data, "subtype", ("role", "permission", "ownership", "none"))
        if classification != "authz":
            subtype = "none"
        elif subtype == "none":
            raise ValueError("authz checks need a subtype")
        return CheckClass(classification, subtype, rationale)
    if isinstance(task, AssessSufficiency):
        verdict = _require_str(data, "verdict", ("protected", "unprotected", "missing_authz", "insufficient_authz"))
        return Sufficiency(verdict, rationale)
    if isinstance(task, ExtractConstraints):
        if data.get("skip"):
            return ConstraintExtraction(True, None, rationale)
        constraint = _constraints.constraint_from_json(data)
        return ConstraintExtraction(False, constraint, rationale)
    if isinstance(task, ConfirmUserSource):
        value = data.get("is_user_source")
        if not isinstance(value, bool):
            raise ValueError("field 'is_user_source' must be a boolean")
        return UserSource(value, rationale)
    if isinstance(task, NextSearchAction):
        tool = _require_str(data, "tool")
        args = data.get("args", {})
        if not isinstance(args, dict):
            raise ValueError("field 'args' must be an object")
        return Action(tool, args, rationale)
    raise TypeError(f"unsupported task {type(task).__name__}")


def make_reasoner(kind: str, rules: OracleRules | None = None, remote: RemoteConfig | None = None):
    if kind == "scripted":
        return ScriptedOracle(rules)
    if kind == "remote":
        if remote is None:
            endpoint = os.environ.get("PRIVFLOW_ENDPOINT", "")
            model = os.environ.get("PRIVFLOW_MODEL", "")
            if not endpoint or not model:
                raise BackendUnavailable(
                    "remote reasoner needs PRIVFLOW_ENDPOINT and PRIVFLOW_MODEL (or explicit config)"
                )
            remote = RemoteConfig(endpoint=endpoint, model=model)
        return RemoteReasoner(remote)
    raise ValueError(f"unknown reasoner kind {kind!r}")


def reason(backend, task):
    """Dispatch a task to a backend; thin functional alias."""
    return backend.reason(task)
