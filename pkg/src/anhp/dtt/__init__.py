from .engine import (AddRecord, CompileError, DatabaseState, DatabaseTimeline, RemovalWinsWarning, TimeOrderError,
                     apply_event, check_deduction_acyclic, deduce_closure, derivations, expand_splits,
                     initial_state, match, possible_events, substitute)
from .syntax import ADD, DEDUCE, REMOVE, Atom, ParseError, Program, Rule, format_program, parse_atom, parse_program
