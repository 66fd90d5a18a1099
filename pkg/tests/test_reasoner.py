import json

import pytest

from privflow.constraints import PathConstraint, StrLitCmp, And
from privflow.reasoner import (
    Action,
    AssessSufficiency,
    BackendUnavailable,
    CheckClass,
    CheckDescriptor,
    ClassifyCheck,
    ClassifyPrivileged,
    ConfirmUserSource,
    ConstraintExtraction,
    ExtractConstraints,
    GuardDescriptor,
    NextSearchAction,
    PrivilegedClass,
    RemoteConfig,
    RemoteReasoner,
    RulesError,
    SchemaViolation,
    ScriptedOracle,
    Sufficiency,
    UserSource,
    load_rules,
    make_reasoner,
)

UPDATE_ROLE_SRC = 'fn update_role(u, r) {\n  userstore.save(u, r)\n}'
CAN_SWITCH_SRC = 'fn can_switch_roles(u) {\n  r = db.read("select allowed")\n  return r\n}'
AUTHN_SRC = 'fn authn_session() {\n  ok = session.get("token")\n  return ok\n}'


class TestRules:
    def test_default_rules_load(self):
        rules = load_rules()
        assert rules.action_verbs and rules.authn_patterns

    def test_empty_list_rejected(self, tmp_path):
        raw = json.loads((__import__("privflow.reasoner", fromlist=["RULES_RESOURCE"]).RULES_RESOURCE).read_text())
        raw["privileged"]["action_verbs"] = []
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(RulesError) as err:
            load_rules(path)
        assert "action_verbs" in str(err.value)

    def test_bad_pattern_rejected(self, tmp_path):
        raw = json.loads((__import__("privflow.reasoner", fromlist=["RULES_RESOURCE"]).RULES_RESOURCE).read_text())
        raw["privileged"]["critical_action_patterns"] = ["("]
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(RulesError):
            load_rules(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(RulesError):
            load_rules(tmp_path / "none.json")

    def test_custom_verb_flips_classification(self, tmp_path):
        oracle = ScriptedOracle()
        task = ClassifyPrivileged(element="e1", name="paySuccess", source="fn paySuccess() { }")
        assert oracle.reason(task).category is None

        raw = json.loads((__import__("privflow.reasoner", fromlist=["RULES_RESOURCE"]).RULES_RESOURCE).read_text())
        raw["privileged"]["critical_action_patterns"].append("(?i)paysuccess")
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(raw))
        custom = ScriptedOracle(load_rules(path))
        assert custom.reason(task).category == "security-critical-action"


class TestClassifyPrivileged:
    def test_update_role_is_protected_state(self, oracle):
        verdict = oracle.reason(ClassifyPrivileged("e1", "update_role", UPDATE_ROLE_SRC))
        assert verdict.category == "protected-state"
        assert verdict.rationale

    def test_logging_is_not_privileged(self, oracle):
        verdict = oracle.reason(ClassifyPrivileged("e1", "", 'log("hello")'))
        assert verdict.category is None

    def test_exec_matches_critical_pattern(self, oracle):
        verdict = oracle.reason(ClassifyPrivileged("e1", "exec", "exec(cmd)"))
        assert verdict.category == "security-critical-action"

    def test_update_account_is_sensitive_resource(self, oracle):
        verdict = oracle.reason(ClassifyPrivileged("e1", "update_account", "fn update_account(a, d) { }"))
        assert verdict.category == "sensitive-resource"


class TestClassifyCheck:
    def test_authz_function_with_role_helper(self, oracle):
        source = "fn authz() {\n  allowed = can_switch_roles(token)\n  return allowed\n}"
        verdict = oracle.reason(ClassifyCheck("e1", "authz", source, "decorator"))
        assert (verdict.classification, verdict.authz_subtype) == ("authz", "role")

    def test_authn_by_name(self, oracle):
        verdict = oracle.reason(ClassifyCheck("e1", "authn_session", AUTHN_SRC, "decorator"))
        assert (verdict.classification, verdict.authz_subtype) == ("authn", "none")

    def test_ownership_comparison(self, oracle):
        verdict = oracle.reason(ClassifyCheck("e1", "", "order.user_id == current", "inline"))
        assert (verdict.classification, verdict.authz_subtype) == ("authz", "ownership")

    def test_status_guard_is_not_a_check(self, oracle):
        verdict = oracle.reason(ClassifyCheck("e1", "", 'status == "PRE_PAY"', "inline"))
        assert verdict.classification == "none"

    def test_can_prefix_is_role_authz(self, oracle):
        source = 'fn can_manage() {\n  p = session.get("perms")\n  return p\n}'
        verdict = oracle.reason(ClassifyCheck("e1", "can_manage", source, "decorator"))
        assert verdict.classification == "authz"


class TestAssessSufficiency:
    def _task(self, checks, contexts=()):
        return AssessSufficiency(
            privop_name="update_role",
            privop_source="update_role(username, role)",
            privop_category="protected-state",
            checks=tuple(checks),
            contexts=tuple(contexts),
        )

    def test_general_permission_is_insufficient(self, oracle):
        checks = [CheckDescriptor("authz", "role", "can_switch_roles", CAN_SWITCH_SRC)]
        verdict = oracle.reason(self._task(checks))
        assert verdict.verdict == "insufficient_authz"

    def test_authn_only_is_missing_authz(self, oracle):
        checks = [CheckDescriptor("authn", "none", "authn_session", AUTHN_SRC)]
        verdict = oracle.reason(self._task(checks))
        assert verdict.verdict == "missing_authz"

    def test_argument_reference_protects(self, oracle):
        source = 'fn authz() {\n  role = request.param("role")\n  return can_assume_role(role)\n}'
        checks = [CheckDescriptor("authz", "role", "authz", source)]
        verdict = oracle.reason(self._task(checks))
        assert verdict.verdict == "protected"

    def test_no_checks_is_unprotected(self, oracle):
        verdict = oracle.reason(self._task([]))
        assert verdict.verdict == "unprotected"

    def test_ownership_note_for_owned_resources(self, oracle):
        task = AssessSufficiency(
            privop_name="db.write",
            privop_source='db.write("update orders set status=paid where no=" + no)',
            privop_category="security-critical-action",
            checks=(CheckDescriptor("authn", "none", "authn_token", AUTHN_SRC),),
        )
        verdict = oracle.reason(task)
        assert verdict.verdict == "missing_authz"
        assert "ownership" in verdict.rationale

    def test_ownership_check_protects_unnamed_args(self, oracle):
        task = AssessSufficiency(
            privop_name="db.write",
            privop_source='db.write("update orders where no=" + no)',
            privop_category="security-critical-action",
            checks=(CheckDescriptor("authz", "ownership", "", "order.user_id == current"),),
        )
        assert oracle.reason(task).verdict == "protected"


class TestConstraintsAndSources:
    def test_guard_translation(self, oracle):
        guards = (GuardDescriptor('mode == "A"', (("mode", "string"),)),)
        verdict = oracle.reason(ExtractConstraints(guards))
        assert not verdict.skipped
        assert verdict.constraint.variables == (("mode", "string"),)

    def test_helper_call_skips(self, oracle):
        verdict = oracle.reason(ExtractConstraints((GuardDescriptor("is_admin(u)", ()),)))
        assert verdict.skipped
        assert verdict.constraint is None

    def test_confirm_user_source(self, oracle):
        yes = oracle.reason(ConfirmUserSource("/api/updateProfile", ("/api",)))
        no = oracle.reason(ConfirmUserSource("/internal/health", ("/api",)))
        assert yes.is_user_source and not no.is_user_source

    def test_prefix_is_segment_aware(self, oracle):
        assert not oracle.reason(ConfirmUserSource("/apix/thing", ("/api",))).is_user_source


class TestNextSearchAction:
    def test_proposal_then_new_round_then_finish(self, oracle):
        services = ("svc",)
        tools = ("q_name", "new_round", "finish")
        first = oracle.reason(NextSearchAction(1, services, (), 0, tools))
        assert first.tool == "q_name"
        assert first.args["service"] == "svc"

        executed = []
        action = first
        while action.tool == "q_name":
            executed.append(_key(action))
            action = oracle.reason(NextSearchAction(1, services, tuple(executed), 1, tools))
        assert action.tool == "new_round"

        action = oracle.reason(NextSearchAction(2, services, tuple(executed), 0, tools))
        assert action.tool == "finish"


class TestScriptedDeterminism:
    def test_identical_tasks_identical_verdicts(self, oracle):
        task = ClassifyPrivileged("e1", "update_role", UPDATE_ROLE_SRC)
        assert oracle.reason(task) == oracle.reason(task)

    def test_every_verdict_variant_producible(self, oracle):
        produced = {
            type(oracle.reason(ClassifyPrivileged("e", "update_role", UPDATE_ROLE_SRC))),
            type(oracle.reason(ClassifyCheck("e", "authz", "fn authz() { }", "decorator"))),
            type(oracle.reason(AssessSufficiency("f", "f(x)", "protected-state", ()))),
            type(oracle.reason(ExtractConstraints(()))),
            type(oracle.reason(ConfirmUserSource("/x", ("/x",)))),
            type(oracle.reason(NextSearchAction(1, (), (), 0, ("finish",)))),
        }
        assert produced == {PrivilegedClass, CheckClass, Sufficiency, ConstraintExtraction, UserSource, Action}

    def test_unknown_task_rejected(self, oracle):
        with pytest.raises(TypeError):
            oracle.reason(object())


def _key(action):
    return "q_name:" + ",".join(f"{k}={action.args[k]}" for k in sorted(action.args))


# --- remote backend (stubbed transport, no network) --------------------------


def _fake_transport(replies, calls):
    def transport(url, headers, payload, timeout):
        calls.append({"url": url, "headers": headers, "payload": payload})
        status, body = replies.pop(0)
        return status, body

    return transport


def _chat(content):
    return 200, {"choices": [{"message": {"content": content}}]}


def remote(replies, calls, **kwargs):
    kwargs.setdefault("retry_backoff", 0.0)
    config = RemoteConfig(endpoint="http://fake/v1/chat/completions", model="test-model", **kwargs)
    return RemoteReasoner(config, transport=_fake_transport(replies, calls))


class TestRemoteReasoner:
    def test_valid_classification_parsed(self):
        calls = []
        backend = remote([_chat('{"category": "protected-state", "rationale": "changes roles"}')], calls)
        verdict = backend.reason(ClassifyPrivileged("e1", "update_role", UPDATE_ROLE_SRC))
        assert verdict == PrivilegedClass("protected-state", "changes roles")
        payload = calls[0]["payload"]
        assert payload["model"] == "test-model"
        assert payload["temperature"] == 0.2
        assert payload["messages"][0]["role"] == "system"

    def test_malformed_reply_retried_then_schema_violation(self):
        calls = []
        bad = _chat("not json at all")
        backend = remote([bad, bad, bad], calls)
        with pytest.raises(SchemaViolation):
            backend.reason(ClassifyPrivileged("e1", "f", "fn f() { }"))
        assert len(calls) == 3

    def test_retry_recovers_on_second_attempt(self):
        calls = []
        backend = remote(
            [_chat("oops"), _chat('{"category": "none", "rationale": "plain helper"}')], calls
        )
        verdict = backend.reason(ClassifyPrivileged("e1", "f", "fn f() { }"))
        assert verdict.category is None
        assert len(calls) == 2

    def test_http_error_is_backend_unavailable(self):
        backend = remote([(503, {})], [])
        with pytest.raises(BackendUnavailable):
            backend.reason(ClassifyPrivileged("e1", "f", "fn f() { }"))

    def test_bad_category_rejected_by_schema(self):
        replies = [_chat('{"category": "mega", "rationale": "?"}')] * 3
        backend = remote(replies, [])
        with pytest.raises(SchemaViolation):
            backend.reason(ClassifyPrivileged("e1", "f", "fn f() { }"))

    def test_check_subtype_schema(self):
        backend = remote(
            [_chat('{"classification": "authz", "subtype": "ownership", "rationale": "compares owner"}')], []
        )
        verdict = backend.reason(ClassifyCheck("e1", "guard", "x.owner == me", "inline"))
        assert verdict == CheckClass("authz", "ownership", "compares owner")

    def test_constraint_payload_parsed(self):
        content = json.dumps(
            {
                "skip": False,
                "variables": [{"name": "mode", "type": "string"}],
                "formula": ["and", ["str_lit_cmp", "mode", "==", "A"]],
                "rationale": "one guard",
            }
        )
        backend = remote([_chat(content)], [])
        verdict = backend.reason(ExtractConstraints((GuardDescriptor('mode == "A"', ()),)))
        assert not verdict.skipped
        assert verdict.constraint == PathConstraint(
            (("mode", "string"),), And((StrLitCmp("mode", "==", "A"),))
        )

    def test_make_reasoner_kinds(self):
        assert isinstance(make_reasoner("scripted"), ScriptedOracle)
        with pytest.raises(ValueError):
            make_reasoner("psychic")
        with pytest.raises(BackendUnavailable):
            make_reasoner("remote")  # no endpoint configured
