import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anhp import AnhpModel, ConfigError, EventSequence, FlatRule, SequenceError, TimeEncodingConfig
from anhp import autodiff as ad

from conftest import flat_model, toy_sequence
from oracles import FlatOracle

SELECTIVE = [FlatRule("ff", heads=("f",), sources=("f",)), FlatRule("ee", heads=("e",), sources=("e",)),
             FlatRule("ef", heads=("e",), sources=("f",))]


def three_event_case(**kw):
    model = flat_model(E=3, D=4, L=2, seed=11, **kw)
    seq = EventSequence([0.4, 1.1, 2.5], ["b", "a", "b"], 4.0)
    return model, seq


def test_zero_layers_stack_is_type_embedding():
    model = flat_model(L=0)
    seq = toy_sequence(model)
    stack = model.embed_event(seq, 2)
    assert len(stack) == 1
    np.testing.assert_array_equal(stack[0], model.params["type_emb"].value[model.type_index[seq.types[2]]])


def test_empty_prefix_query_keeps_layer_zero():
    model = flat_model(L=3, seed=4)
    empty = EventSequence([], [], 5.0)
    stack = model.coarse_embed("b", 1.3, empty)
    assert len(stack) == 4
    for x in stack:
        np.testing.assert_array_equal(x, stack[0])


def test_actual_event_stacks_match_straight_line_oracle():
    model, seq = three_event_case()
    oracle = FlatOracle(model)
    ref = oracle.event_layers(list(seq.times), seq.types)
    for i in range(3):
        got = model.embed_event(seq, i)
        for l in range(3):
            np.testing.assert_allclose(got[l], ref[l][i], rtol=0, atol=1e-13)


@pytest.mark.parametrize("coarse", [None, "single"])
def test_query_stacks_and_intensities_match_oracle(coarse):
    model, seq = three_event_case(coarse=coarse)
    oracle = FlatOracle(model)
    for t in [0.2, 1.7, 3.9]:
        for e in model.types:
            got = model.coarse_embed(e, t, seq)
            ref = oracle.query_layers(list(seq.times), seq.types, e, t)
            for a, b in zip(got, ref):
                np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
            lam = model.intensity(e, t, seq)
            assert lam == pytest.approx(oracle.intensity(list(seq.times), seq.types, e, t), rel=1e-12)


def test_selective_rules_match_oracle():
    model = AnhpModel(["e", "f"], 4, TimeEncodingConfig(0.25, 8.0, 4), 2, rules=SELECTIVE, seed=2)
    seq = EventSequence([0.3, 0.9, 1.4, 2.2], ["e", "f", "f", "e"], 3.0)
    oracle = FlatOracle(model)
    for t in [1.0, 2.9]:
        for e in ["e", "f"]:
            assert model.intensity(e, t, seq) == pytest.approx(
                oracle.intensity(list(seq.times), seq.types, e, t), rel=1e-12)


def test_identity_coarse_map_reuses_event_path():
    model, seq = three_event_case()
    for i in range(3):
        actual = model.embed_event(seq, i)
        query = model.coarse_embed(seq.types[i], float(seq.times[i]), seq)
        for a, b in zip(actual, query):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_single_coarse_class_shares_stacks():
    model, seq = three_event_case(coarse="single")
    s1 = model.coarse_embed("a", 3.0, seq)
    s2 = model.coarse_embed("c", 3.0, seq)
    for a, b in zip(s1, s2):
        np.testing.assert_array_equal(a, b)


def test_shared_stack_intensities_differ_only_through_head_weights():
    model, seq = three_event_case(coarse="single")
    p = model.params
    p["w"].value[2] = p["w"].value[0]
    p["tau_raw"].value[2] = p["tau_raw"].value[0]
    assert model.intensity("a", 3.0, seq) == model.intensity("c", 3.0, seq)
    p["w"].value[2, 0] += 0.5
    assert model.intensity("a", 3.0, seq) != model.intensity("c", 3.0, seq)


def test_coarse_class_must_share_visibility():
    tc = TimeEncodingConfig(0.25, 8.0, 4)
    with pytest.raises(ConfigError):
        AnhpModel(["e", "f"], 4, tc, 1, rules=SELECTIVE, coarse="single")
    # e and f attend under different rules, so separate classes are fine
    AnhpModel(["e", "f"], 4, tc, 1, rules=SELECTIVE, coarse={"e": "E", "f": "F"})


def test_config_errors():
    tc = TimeEncodingConfig(0.25, 8.0, 4)
    with pytest.raises(ConfigError):
        AnhpModel(["a", "a"], 4, tc)
    with pytest.raises(ConfigError):
        AnhpModel(["a"], 4, tc, rules=[FlatRule("r", heads=("zz",))])
    with pytest.raises(ConfigError):
        AnhpModel(["a", "b"], 4, tc, coarse={"a": "x"})


def test_config_round_trip_rebuilds_same_model():
    model = flat_model(E=2, D=4, L=2, use_layer_norm=True, use_ffn=True, coarse="single", seed=9)
    clone = AnhpModel.from_config(model.config())
    assert clone.config() == model.config()
    for k, v in model.params.items():
        np.testing.assert_array_equal(v.value, clone.params[k].value)


def test_parallel_encoding_equals_one_query_at_a_time():
    model = flat_model(E=3, D=6, L=2, seed=3)
    seq = toy_sequence(model, n=8, seed=2)
    enc = model.encode(seq.times, seq.types)
    for i in range(len(seq)):
        alone = model.embed_event(seq, i)
        for l in range(model.L + 1):
            np.testing.assert_allclose(enc.layers[l].value[i], alone[l], rtol=0, atol=1e-14)


def test_conditional_intensities_batch_equals_pointwise():
    model = flat_model(E=3, D=4, L=2, seed=6, coarse="single")
    seq = toy_sequence(model, n=6, seed=1)
    cond = model.conditional(seq)
    ts = np.array([4.1, 4.5, 9.0])
    batch = cond.intensities(ts)
    for k, t in enumerate(ts):
        for j, e in enumerate(model.types):
            assert batch[k, j] == pytest.approx(model.intensity(e, t, seq), rel=1e-13)


@settings(max_examples=40)
@given(seed=st.integers(0, 10_000), t=st.floats(0.5, 3.5), shift=st.floats(0.0, 2.0))
def test_causality_future_events_do_not_matter(seed, t, shift):
    model = flat_model(E=3, D=4, L=2, seed=seed % 7)
    seq = toy_sequence(model, n=6, seed=seed)
    n = int(np.searchsorted(seq.times, t, side="left"))
    # move every event at or after t later, and relabel it
    times = seq.times.copy()
    times[n:] = times[n:] + shift + 1e-3
    types = seq.types[:n] + [model.types[(model.type_index[e] + 1) % 3] for e in seq.types[n:]]
    other = EventSequence(times, types, float(times[-1]) + 1.0)
    for e in model.types:
        a = model.coarse_embed(e, t, seq)
        b = model.coarse_embed(e, t, other)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_causality_within_joint_encoding():
    model = flat_model(E=3, D=4, L=2, seed=1)
    seq = toy_sequence(model, n=6, seed=3)
    enc = model.encode(seq.times, seq.types)
    times = seq.times.copy()
    times[4:] += 0.7
    types = seq.types[:4] + ["a", "a"]
    enc2 = model.encode(times, types)
    for l in range(3):
        np.testing.assert_array_equal(enc.layers[l].value[:4], enc2.layers[l].value[:4])


def test_selective_blocking_is_exact():
    model = AnhpModel(["e", "f"], 4, TimeEncodingConfig(0.25, 8.0, 4), 2, rules=SELECTIVE, seed=5)
    seq = EventSequence([0.3, 0.9, 1.4, 2.2, 2.6], ["e", "f", "e", "f", "e"], 4.0)
    moved = EventSequence([0.1, 0.9, 2.0, 2.2, 3.1], ["e", "f", "e", "f", "e"], 4.0)
    dropped = EventSequence([0.9, 2.2], ["f", "f"], 4.0)
    probes = np.linspace(0.05, 3.95, 40)
    for t in probes:
        ref = model.intensity("f", t, seq)
        assert model.intensity("f", t, moved) == ref
        assert model.intensity("f", t, dropped) == ref


def test_likelihood_matches_oracle_terms():
    model, seq = three_event_case()
    oracle = FlatOracle(model)
    mc = np.array([0.1, 0.9, 2.0, 3.3])
    ll = model.log_likelihood(seq, mc).item()
    times, types = list(seq.times), seq.types
    ev = sum(np.log(oracle.intensity(times, types, e, t)) for e, t in zip(types, times))
    integ = sum(oracle.total_intensity(times, types, u) for u in mc) * seq.T / len(mc)
    assert ll == pytest.approx(ev - integ, rel=1e-12)
    lam_e, lam_tot = model.event_intensities(seq)
    for i, (e, t) in enumerate(zip(types, times)):
        assert lam_e[i] == pytest.approx(oracle.intensity(times, types, e, t), rel=1e-12)
        assert lam_tot[i] == pytest.approx(oracle.total_intensity(times, types, t), rel=1e-12)


@pytest.mark.parametrize("opts", [{}, {"coarse": "single"}, {"use_layer_norm": True},
                                  {"use_ffn": True}, {"use_layer_norm": True, "use_ffn": True}])
def test_gradients_pass_finite_difference_check(opts):
    model = flat_model(E=2, D=4, L=2, seed=8, **opts)
    seq = toy_sequence(model, n=4, seed=5)
    mc = np.random.default_rng(1).uniform(0, seq.T, size=5)
    rep = ad.finite_difference_check(lambda: model.log_likelihood(seq, mc), model.params.tensors(),
                                     step=1e-5, tolerance=1e-3)
    assert rep.passed, rep.worst


def test_unknown_type_is_a_sequence_error():
    model = flat_model(E=2)
    with pytest.raises(SequenceError):
        model.validate_sequence(EventSequence([1.0], ["zz"], 2.0))


def test_parameter_initialisation_conventions():
    model = flat_model(E=3, D=8, L=1, Dt=4, seed=0)
    p = model.params
    assert p["type_emb"].shape == (3, 8)
    V = p["layer1/all/V"].value
    assert V.shape == (8, 1 + 4 + 8)
    assert np.abs(V).max() <= 1 / np.sqrt(13)
    np.testing.assert_allclose(model.tau().value, 1.0, rtol=1e-12)
    assert np.abs(p["type_emb"].value).max() < 1.0
