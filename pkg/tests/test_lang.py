import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import corpus_text
from strategies import fsms, swarm_specs
from swarmcsp.lang import SpecSyntaxError, ValidationError, parse, print_spec, tokenize
from swarmcsp.model import AtMost

MINIMAL = """\
swarm k=2
fsm robot {
  states: A, B
  initial: A
  on go A -> B
  on back B -> A
}
"""


class TestParse:
    def test_faulty_corpus(self, faulty):
        assert faulty.k == 3
        assert faulty.robot_fsm().view_states == {"R", "P", "F"}
        assert set(faulty.channels) == {"c"}
        assert faulty.illegal == [AtMost(1, "P")]
        assert set(faulty.profiles) == {"simulation", "physical"}

    def test_empty_input(self):
        with pytest.raises(SpecSyntaxError) as err:
            parse("")
        assert (err.value.line, err.value.col) == (1, 1)

    def test_syntax_error_position(self):
        with pytest.raises(SpecSyntaxError) as err:
            parse("swarm k=2\nprocess P = a -> )\n")
        assert err.value.line == 2

    def test_undeclared_state_is_named(self):
        text = MINIMAL.replace("on back B -> A", "on back X -> A")
        with pytest.raises(ValidationError) as err:
            parse(text)
        assert any("X" in d for d in err.value.diagnostics)

    def test_nondeterministic_transition(self):
        text = MINIMAL.replace("on back B -> A", "on back B -> A\n  on back B -> B")
        with pytest.raises(ValidationError):
            parse(text)

    def test_missing_initial(self):
        with pytest.raises(ValidationError):
            parse(MINIMAL.replace("  initial: A\n", ""))

    def test_missing_swarm_statement(self):
        with pytest.raises(ValidationError):
            parse(MINIMAL.replace("swarm k=2\n", ""))

    @pytest.mark.parametrize("bad", [
        "illegal atmost 2 in A",       # n must be < k
        "illegal atmost 1 in Q",       # unknown state
        "illegal pattern (A, B, A)",   # arity differs from k
        "profile p {\n  A -> A : mean=1 dev=0\n}",  # not a transition
        "profile p {\n  A -> B : mean=0 dev=0\n}",  # mean must be positive
        "process P = undeclared!x -> P",
        "process P = Q",
    ])
    def test_invalid_statements_rejected(self, bad):
        with pytest.raises((ValidationError, SpecSyntaxError)):
            parse(MINIMAL + bad + "\n")

    def test_unguarded_recursion_rejected(self):
        with pytest.raises(ValidationError):
            parse("swarm k=1\nprocess P = P [] a -> P\n")

    def test_process_fsm_mismatch_rejected(self):
        text = MINIMAL + "process A = go -> B\nprocess B = go -> A\n"
        with pytest.raises(ValidationError):
            parse(text)

    def test_comments_and_continuations(self):
        spec = parse("# header\nswarm k=1  # trailing\nprocess P = a ->\n   b -> P\n")
        assert print_spec(spec).splitlines()[1] == "process P = a -> b -> P"

    def test_tokens_include_broadcast(self):
        kinds = [t.text for t in tokenize("c!!p c?x c!y")]
        assert kinds[:3] == ["c!!p", "c?x", "c!y"]

    def test_dev_may_exceed_mean(self):
        spec = parse(MINIMAL + "profile p {\n  A -> B : mean=1 dev=5\n}\n")
        assert spec.profiles["p"].get("A", "B").dev == 5


class TestPrint:
    @pytest.mark.parametrize("name", ["faulty", "corrected"])
    def test_corpus_round_trip_is_fixed_point(self, name):
        once = print_spec(parse(corpus_text(name)))
        assert print_spec(parse(once)) == once
        assert parse(once) == parse(corpus_text(name))

    def test_corrected_keeps_all_definitions(self, corrected):
        again = parse(print_spec(corrected))
        assert list(again.processes) == ["R", "C_m", "A", "C_s", "P", "F"]
        assert again.processes == corrected.processes

    @settings(max_examples=100, deadline=None)
    @given(swarm_specs())
    def test_generated_round_trip(self, spec):
        assert parse(print_spec(spec)) == spec

    @settings(max_examples=100, deadline=None)
    @given(swarm_specs(), st.integers(0, 3))
    def test_mutations_are_rejected(self, spec, which):
        """Each mutation breaks one invariant; parse must refuse the text."""
        text = print_spec(spec)
        if which == 0:
            text = text.replace(f"swarm k={spec.k}", "swarm k=0")
        elif which == 1:
            text += f"illegal atmost {spec.k} in {spec.fsm.states[0]}\n"
        elif which == 2:
            text += "illegal pattern (" + ", ".join(["*"] * (spec.k + 1)) + ")\n"
        else:
            text += f"fsm robot {{\n  states: Z\n  initial: Z\n}}\n"
        with pytest.raises((ValidationError, SpecSyntaxError)):
            parse(text)

    @settings(max_examples=50, deadline=None)
    @given(fsms())
    def test_fsm_only_designs_print_their_machine(self, fsm):
        from swarmcsp.model import SwarmSpec

        spec = SwarmSpec(k=1, fsm=fsm)
        assert parse(print_spec(spec)).fsm == fsm
