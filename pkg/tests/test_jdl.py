import importlib.resources
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskgrid import jdl
from deskgrid.jdl import (UNDEFINED, Attr, Binary, JdlError, JdlSyntaxError,
                          Lit, ListLit, MemberCall, MissingAttribute, Unary,
                          evaluate, expr_text, parse_expr, parse_jdl,
                          requirement_satisfied)

from jdl_reference import (ast_equal, gen_env, gen_expr, model_eval,
                           values_agree)


def fixture_text(name: str) -> str:
    return importlib.resources.files("deskgrid").joinpath(
        "data", "jdl", name).read_text()


FIXTURES = ("atlas_100.jdl", "cms_gen_small.jdl", "data_driven.jdl",
            "awkward.jdl", "rank_idle.jdl", "minimal.jdl")


# -- parsing ------------------------------------------------------------

def test_atlas_fixture_fields():
    jd = parse_jdl(fixture_text("atlas_100.jdl"))
    assert jd.executable == "atlsim"
    assert jd.job_profile == "atlsim"
    assert jd.input_sandbox == ("dc1_cards.txt",)
    assert jd.output_sandbox == ("dc1_partition.zebra", "control_histos.hbook")
    assert jd.virtual_organisation == "datatag"
    assert jd.events == 100
    assert jd.job_seed == 17
    assert jd.rank is None
    env = {"RunTimeEnvironment": ("ATLAS-3.2.1", "CMS")}
    assert requirement_satisfied(jd.requirements, env)
    assert not requirement_satisfied(jd.requirements, {"RunTimeEnvironment": ("CMS",)})


def test_minimal_fixture_defaults():
    jd = parse_jdl(fixture_text("minimal.jdl"))
    assert jd.std_output == "std.out"
    assert jd.std_error == "std.err"
    assert jd.events == 1
    assert jd.job_seed == 0
    assert jd.arguments == ()
    assert jd.input_data == ()
    assert jd.extras == {}


def test_profile_name_strips_path_and_extension():
    jd = parse_jdl(fixture_text("awkward.jdl"))
    assert jd.executable == "bin/myapp.sh"
    assert jd.job_profile == "myapp"
    # single-string Arguments folds to a one-entry tuple
    assert jd.arguments == ("--mode fast -n 3",)


def test_unknown_attributes_kept_verbatim():
    jd = parse_jdl(fixture_text("awkward.jdl"))
    assert jd.extras["MaxRetries"] == "3"
    assert jd.extra_int("MaxRetries") == 3
    assert jd.extra_string("Note") == 'half # hash, one " quote'
    assert jd.extra_string("Nothing") is None


def test_data_driven_fixture_lfns():
    jd = parse_jdl(fixture_text("data_driven.jdl"))
    assert jd.input_data == ("lfn:demo_1.ntpl",)
    assert jd.input_lfns == ("demo_1.ntpl",)
    assert jd.replica_catalog == "rc_cnaf"


@pytest.mark.parametrize("missing", ["Executable", "Requirements",
                                     "VirtualOrganisation"])
def test_required_attributes(missing):
    lines = {
        "Executable": 'Executable = "x";',
        "Requirements": "Requirements = true;",
        "VirtualOrganisation": 'VirtualOrganisation = "vo";',
    }
    text = "\n".join(v for k, v in lines.items() if k != missing)
    with pytest.raises(MissingAttribute) as err:
        parse_jdl(text)
    assert err.value.attribute == missing


def test_duplicate_attribute_rejected():
    text = 'Executable = "x";\nExecutable = "y";\nRequirements = true;\n' \
           'VirtualOrganisation = "vo";'
    with pytest.raises(JdlSyntaxError, match="duplicate"):
        parse_jdl(text)


def test_input_data_needs_catalog():
    text = ('Executable = "x";\nRequirements = true;\n'
            'VirtualOrganisation = "vo";\nInputData = {"lfn:a"};')
    with pytest.raises(JdlError, match="ReplicaCatalog"):
        parse_jdl(text)


def test_events_must_be_positive():
    text = ('Executable = "x";\nRequirements = true;\n'
            'VirtualOrganisation = "vo";\nEvents = 0;')
    with pytest.raises(JdlError, match="at least 1"):
        parse_jdl(text)


def test_syntax_errors_carry_position():
    with pytest.raises(JdlSyntaxError) as err:
        parse_jdl('Executable = "x"\nRequirements = true;')
    assert err.value.line == 2  # the missing ';' is noticed at Requirements
    with pytest.raises(JdlSyntaxError, match="unterminated string"):
        parse_jdl('Executable = "x;')
    with pytest.raises(JdlSyntaxError, match="stray character"):
        parse_expr("1 @ 2")


def test_comparisons_do_not_chain():
    with pytest.raises(JdlSyntaxError, match="trailing input"):
        parse_expr("1 < 2 < 3")


def test_precedence_shapes():
    e = parse_expr("true || false && false")
    assert e == Binary("||", Lit(True), Binary("&&", Lit(False), Lit(False)))
    e = parse_expr("!other.Flag == true")
    assert e == Binary("==", Unary("!", Attr("Flag")), Lit(True))
    e = parse_expr("-3 < other.X && true")
    assert e == Binary("&&", Binary("<", Unary("-", Lit(3)), Attr("X")), Lit(True))


def test_keywords_case_insensitive_attributes_not():
    assert parse_expr("TRUE") == Lit(True)
    assert parse_expr("False") == Lit(False)
    assert parse_expr('member("a", {"a"})') == MemberCall(Lit("a"), ListLit((Lit("a"),)))
    assert parse_expr("other.LRMSType") == Attr("LRMSType")
    assert parse_expr("OTHER.x") == Attr("x")


# -- evaluation ---------------------------------------------------------

def test_three_valued_truth_table():
    u = Attr("Missing")  # evaluates UNDEFINED in an empty env
    t, f = Lit(True), Lit(False)
    assert evaluate(Binary("||", t, u)) is True         # right arm skipped
    assert evaluate(Binary("&&", f, u)) is False
    assert evaluate(Binary("||", f, u)) is UNDEFINED
    assert evaluate(Binary("&&", t, u)) is UNDEFINED
    assert evaluate(Binary("||", u, t)) is UNDEFINED    # left bias: no rescue
    assert evaluate(Binary("&&", u, f)) is UNDEFINED


def test_short_circuit_skips_right_arm_entirely():
    # a right arm that would blow up if visited
    bomb = Binary("<", Lit("s"), ListLit(()))  # would be UNDEFINED anyway
    assert evaluate(Binary("||", Lit(True), bomb)) is True
    assert evaluate(Binary("&&", Lit(False), bomb)) is False


def test_comparison_type_discipline():
    assert evaluate(parse_expr("1 < 2")) is True
    assert evaluate(parse_expr("2.5 >= 2.5")) is True
    assert evaluate(parse_expr('"a" < "b"')) is UNDEFINED   # ordering is numeric only
    assert evaluate(parse_expr('"a" == "a"')) is True
    assert evaluate(parse_expr('"a" != "b"')) is True
    assert evaluate(parse_expr('1 == "1"')) is UNDEFINED
    assert evaluate(parse_expr("true == false")) is False
    assert evaluate(parse_expr("true == 1")) is UNDEFINED


def test_unary_discipline():
    assert evaluate(parse_expr("!true")) is False
    assert evaluate(parse_expr("!5")) is UNDEFINED
    assert evaluate(parse_expr("-5")) == -5
    assert evaluate(parse_expr('-"x"')) is UNDEFINED
    assert evaluate(Unary("!", Attr("Missing"))) is UNDEFINED


def test_member_and_lists():
    env = {"RunTimeEnvironment": ("CMS", "ATLAS-3.2.1")}
    assert evaluate(parse_expr('Member("CMS", other.RunTimeEnvironment)'), env) is True
    assert evaluate(parse_expr('Member("ALICE", other.RunTimeEnvironment)'), env) is False
    assert evaluate(parse_expr('Member("x", other.Missing)'), env) is UNDEFINED
    assert evaluate(parse_expr('Member(3, {"a"})'), env) is UNDEFINED
    assert evaluate(parse_expr('{"a", "b"}')) == ("a", "b")
    assert evaluate(ListLit((Lit(3),))) is UNDEFINED  # non-string entry
    assert evaluate(Attr("L"), {"L": ["x"]}) == ("x",)  # lists surface as tuples


def test_undefined_refuses_python_truth():
    with pytest.raises(TypeError):
        bool(UNDEFINED)
    assert not requirement_satisfied(Attr("Missing"), {})


def test_member_conjunction_narrows_matches():
    # adding a Member conjunct can only shrink the satisfying set
    base = parse_expr('Member("CMS", other.RunTimeEnvironment)')
    narrowed = parse_expr('Member("CMS", other.RunTimeEnvironment) '
                          '&& Member("CMS-1.2", other.RunTimeEnvironment)')
    envs = [{"RunTimeEnvironment": tags} for tags in
            [(), ("CMS",), ("CMS-1.2",), ("CMS", "CMS-1.2"), ("x", "CMS")]]
    for env in envs:
        if requirement_satisfied(narrowed, env):
            assert requirement_satisfied(base, env)


# -- round-trips --------------------------------------------------------

@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_round_trip_is_a_fixpoint(name):
    first = parse_jdl(fixture_text(name))
    once = first.text()
    second = parse_jdl(once)
    assert second.text() == once
    assert second.executable == first.executable
    assert second.events == first.events
    assert second.extras == first.extras
    assert expr_text(second.requirements) == expr_text(first.requirements)


def test_expr_text_parenthesizes_only_when_needed():
    assert expr_text(parse_expr("true || false && true")) == "true || false && true"
    e = Binary("&&", Binary("||", Lit(True), Lit(False)), Lit(True))
    assert expr_text(e) == "(true || false) && true"
    assert expr_text(parse_expr("-(-5)")) == "--5"  # parens not needed back out


def test_unary_minus_of_comparison_needs_parens():
    e = Unary("-", Binary("<", Lit(1), Lit(2)))
    text = expr_text(e)
    assert ast_equal(parse_expr(text), e)


@settings(max_examples=400, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_generated_ast_round_trips_exactly(seed):
    rng = random.Random(seed)
    expr = gen_expr(rng)
    text = expr_text(expr)
    again = parse_expr(text)
    assert ast_equal(expr, again), text
    assert expr_text(again) == text


@settings(max_examples=400, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_evaluator_matches_independent_model(seed):
    rng = random.Random(seed)
    expr = gen_expr(rng)
    env = gen_env(rng)
    real = evaluate(expr, env)
    model = model_eval(expr, env)
    assert values_agree(real, model), (expr_text(expr), env, real, model)


def test_rank_expression_evaluates_against_published_figures():
    jd = parse_jdl(fixture_text("rank_idle.jdl"))
    value = evaluate(jd.rank, {"EstimatedTraversalTime": 62.5})
    assert value == -62.5
