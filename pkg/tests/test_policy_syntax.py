from __future__ import annotations

from importlib import resources

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from datacapsule.attributes import (
    CONSENT_REQUIRED,
    NOTIFICATION_REQUIRED,
    Declass,
    Filter,
    Interval,
    Purpose,
    Redact,
    RedactMode,
    Role,
    RoleCall,
    RoleLiteral,
    RoleVar,
    Schema,
)
from datacapsule.errors import ParseError, PolicySyntaxError, UnknownAttribute, UnknownLabel
from datacapsule.policy import And, Atom, Or, PolicyAST, PolicyDNF, Top, to_dnf
from datacapsule.policy_syntax import SourcePolicy, load_policy, parse_policy, print_policy

from gen import any_attr


def bundled(name: str) -> str:
    return resources.files("datacapsule").joinpath("data").joinpath(name).read_text()


GDPR_SUBSET_DNF = {
    frozenset({Schema.of({"NotPII"}), NOTIFICATION_REQUIRED, Role(RoleVar("user_id"))}),
    frozenset({Schema.of({"NotPII"}), NOTIFICATION_REQUIRED, CONSENT_REQUIRED, Declass.dp(1, 1e-6)}),
}


class TestParse:
    def test_gdpr_subset_shape(self):
        ast = parse_policy(bundled("gdpr_subset.priv"))
        assert len(ast.clauses) == 1
        f = ast.clauses[0]
        # SCHEMA AND (NOTIFICATION AND (ROLE OR (...)))
        assert isinstance(f, And) and isinstance(f.right, And) and isinstance(f.right.right, Or)

    def test_gdpr_subset_dnf(self):
        dnf = to_dnf(parse_policy(bundled("gdpr_subset.priv")))
        assert {c.atoms for c in dnf.clauses} == GDPR_SUBSET_DNF

    def test_full_gdpr_has_five_clauses(self):
        assert len(parse_policy(bundled("gdpr.priv")).clauses) == 5

    def test_smallest_policy(self):
        ast = parse_policy("ALLOW CONSENT_REQUIRED")
        assert ast.clauses == (Atom(CONSENT_REQUIRED),)

    def test_and_binds_tighter_than_or(self):
        ast = parse_policy("ALLOW CONSENT_REQUIRED OR NOTIFICATION_REQUIRED AND ROLE Analyst")
        f = ast.clauses[0]
        assert isinstance(f, Or) and isinstance(f.right, And)

    @pytest.mark.parametrize("text, attr", [
        ("FILTER age > 17", Filter("age", Interval.at_least(18))),
        ("FILTER age >= 18", Filter("age", Interval.at_least(18))),
        ("FILTER age < 65", Filter("age", Interval.at_most(64))),
        ("FILTER age <= 64", Filter("age", Interval.at_most(64))),
        ("FILTER age [3, 9]", Filter("age", Interval(3, 9))),
        ("FILTER age [-inf, 9]", Filter("age", Interval.at_most(9))),
        ("FILTER age []", Filter("age", Interval.empty())),
        ("DECLASS DP 1 0.000001", Declass.dp(1, 1e-6)),
        ("DECLASS DifferentialPrivacy 1 0.000001", Declass.dp(1, 1e-6)),
        ("DECLASS Any", Declass.any()),
        ("REDACT ssn hash", Redact("ssn", RedactMode.hash())),
        ("REDACT ssn truncate(4)", Redact("ssn", RedactMode.truncate(4))),
        ("PURPOSE PublicHealth Research", Purpose.of({"PublicHealth", "Research"})),
        ("ROLE UserAffiliatedOrganizations($user_id)", Role(RoleCall("UserAffiliatedOrganizations", RoleVar("user_id")))),
        ("ROLE Analyst", Role(RoleLiteral("Analyst"))),
        ("SCHEMA Name SSN PII", Schema.of({"PII"})),
    ])
    def test_attribute_forms(self, text, attr):
        assert parse_policy("ALLOW " + text).clauses == (Atom(attr),)

    def test_citations_and_comments_are_ignored(self):
        a = parse_policy("ALLOW SCHEMA PII (Article 9) # note\n AND CONSENT_REQUIRED (Recital 4, 6)")
        b = parse_policy("ALLOW SCHEMA PII AND CONSENT_REQUIRED")
        assert a == b

    def test_bare_allow_is_unconditional(self):
        assert parse_policy("ALLOW\nALLOW CONSENT_REQUIRED").clauses[0] == Top()

    def test_dp_aliases_agree(self):
        assert to_dnf(parse_policy(bundled("gdpr_subset.priv"))) == \
            to_dnf(parse_policy(bundled("gdpr_subset.priv").replace("DP", "DifferentialPrivacy")))


class TestErrors:
    def test_unknown_attribute(self):
        with pytest.raises(UnknownAttribute) as info:
            parse_policy("ALLOW\n  FROB x")
        assert info.value.line == 2 and info.value.column == 3

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel, match="Martian"):
            parse_policy("ALLOW SCHEMA Martian")

    def test_missing_allow(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy("SCHEMA PII")

    def test_unbalanced_parens(self):
        with pytest.raises(PolicySyntaxError) as info:
            parse_policy("ALLOW (SCHEMA PII AND CONSENT_REQUIRED")
        assert info.value.line == 1

    def test_empty_input(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy("")

    def test_keywords_are_case_sensitive(self):
        with pytest.raises(ParseError):
            parse_policy("allow SCHEMA PII")

    def test_bad_dp_parameters(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy("ALLOW DECLASS DP 0 0")

    def test_invalid_utf8(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy(b"ALLOW \xff")

    def test_deep_nesting_is_an_error_not_a_crash(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy("ALLOW " + "(" * 5000 + "CONSENT_REQUIRED" + ")" * 5000)

    def test_long_chains_parse(self):
        text = "ALLOW " + " AND ".join(["CONSENT_REQUIRED"] * 3000)
        assert len(to_dnf(parse_policy(text))) == 1

    def test_origin_is_reported(self, tmp_path):
        p = tmp_path / "bad.priv"
        p.write_text("ALLOW SCHEMA\n")
        with pytest.raises(ParseError, match="bad.priv"):
            load_policy(p)


def test_gdpr_round_trip():
    ast = parse_policy(bundled("gdpr.priv"))
    assert parse_policy(print_policy(ast)) == ast


def test_dnf_prints_one_allow_per_clause():
    assert print_policy(PolicyDNF.of([[CONSENT_REQUIRED]])) == "ALLOW CONSENT_REQUIRED\n"
    dnf = to_dnf(parse_policy(bundled("gdpr.priv")))
    assert print_policy(dnf).count("ALLOW") == len(dnf)


def test_source_policy_from_file(tmp_path):
    p = tmp_path / "x.priv"
    p.write_text("ALLOW NOTIFICATION_REQUIRED")
    src = SourcePolicy.from_file(p)
    assert src.origin.endswith("x.priv")
    assert parse_policy(src).clauses == (Atom(NOTIFICATION_REQUIRED),)


def asts():
    leaf = any_attr.map(Atom)
    formula = st.recursive(leaf, lambda k: st.one_of(st.builds(And, k, k), st.builds(Or, k, k)), max_leaves=6)
    clause = st.one_of(formula, st.just(Top()))
    return st.lists(clause, min_size=1, max_size=4).map(PolicyAST)


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
@given(asts())
def test_print_parse_round_trip_ast(ast):
    assert parse_policy(print_policy(ast)) == ast


@settings(max_examples=300)
@given(asts())
def test_print_parse_round_trip_dnf(ast):
    dnf = to_dnf(ast)
    assert to_dnf(parse_policy(print_policy(dnf))) == dnf


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_parser_total_on_bytes(data):
    try:
        parse_policy(data)
    except ParseError:
        pass


TOKENS = ["ALLOW", "AND", "OR", "(", ")", "SCHEMA", "PII", "ROLE", "$x", "FILTER", "age", ">", "3",
          "[", "]", ",", "DECLASS", "DP", "1", "REDACT", "truncate", "CONSENT_REQUIRED", "-inf", "(Article 3)"]


@settings(max_examples=500)
@given(st.lists(st.sampled_from(TOKENS), max_size=25))
def test_parser_total_on_token_soup(tokens):
    try:
        parse_policy(" ".join(tokens))
    except ParseError:
        pass
