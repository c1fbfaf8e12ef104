import json
import math

import numpy as np
import pytest

from anhp import AndttModel, EventSequence, TimeEncodingConfig, bootstrap_ci, evaluate, generate_synthetic
from anhp.base import Conditional, EventModel
from anhp.evaluation import restricted_candidates, restricted_set
from anhp.likelihood import draw_mc_times
from anhp.reference import ConstantRateModel
from anhp.rng import sequence_key, stream
from anhp.thinning import predict_time, predict_type

from conftest import TEAM_FORUMS, flat_model


# -- bootstrap --------------------------------------------------------------------------

def test_identical_values_give_zero_width():
    ci = bootstrap_ci(np.full(20, 0.7))
    assert ci.lo == ci.point == ci.hi == pytest.approx(0.7)
    assert not ci.degenerate


def test_binary_values_stay_in_range():
    ci = bootstrap_ci([0.0, 1.0])
    assert 0.0 <= ci.lo <= ci.point <= ci.hi <= 1.0


def test_single_sequence_is_degenerate():
    ci = bootstrap_ci([3.0], [2.0])
    assert ci.degenerate and ci.lo == ci.hi == ci.point == 1.5


def test_replicate_floor():
    with pytest.raises(ValueError):
        bootstrap_ci([1.0, 2.0], n_replicates=99)


def test_ratio_point_and_transform():
    ci = bootstrap_ci([2.0, 6.0], [1.0, 1.0], transform=np.sqrt)
    assert ci.point == 2.0
    assert ci.lo <= ci.point <= ci.hi


def test_coverage_on_gaussian_means():
    rng = np.random.default_rng(5)
    hits = 0
    trials = 500
    for k in range(trials):
        x = rng.normal(1.0, 2.0, size=100)
        ci = bootstrap_ci(x, seed=k)
        hits += ci.lo <= 1.0 <= ci.hi
    assert abs(hits / trials - 0.95) < 3 * math.sqrt(0.95 * 0.05 / trials)


def test_mc_pool_widens_interval():
    rng = np.random.default_rng(1)
    base = rng.normal(size=30)
    flat = bootstrap_ci(base)
    noisy = bootstrap_ci(base[:, None] + rng.normal(0, 3.0, size=(30, 20)))
    assert noisy.hi - noisy.lo > flat.hi - flat.lo


# -- metrics ----------------------------------------------------------------------------

class _Clockwork(EventModel):
    """Knows the data: after k events the next one is type 'a' at exactly 0.01 * (k + 1)."""

    kind = "clockwork"
    types = ["a", "b"]

    def log_likelihood(self, seq, mc_times, downsample=None):
        raise NotImplementedError

    def event_intensities(self, seq):
        raise NotImplementedError

    def conditional(self, seq, n_prefix=None):
        n = len(seq) if n_prefix is None else n_prefix
        return _Step(0.01 * n, 0.01 * (n + 1))


class _Step(Conditional):
    types = ["a", "b"]
    RATE = 1e5

    def __init__(self, t0, at):
        self.t0, self.at = t0, at

    def intensities(self, times):
        t = np.asarray(times, dtype=float).reshape(-1, 1)
        on = np.where(t >= self.at, self.RATE, 0.0)
        return np.hstack([on, on * 1e-9])

    def upper_bounds(self):
        return np.array([self.RATE, self.RATE * 1e-9])


def test_perfect_model_on_deterministic_data():
    seqs = [EventSequence([0.01, 0.02, 0.03, 0.04], ["a"] * 4, 0.05) for _ in range(3)]
    rep = evaluate(_Clockwork(), seqs, metrics=("time", "type"), n_time_samples=50)
    assert rep.time_rmse.point < 1e-4        # only the 1/RATE jitter of the sampler
    assert rep.type_error.point == 0.0 and rep.type_error.hi == 0.0
    assert rep.nll is None


def test_uniform_two_type_model_errs_half_the_time():
    model = ConstantRateModel({"a": 1.0, "b": 1.0})
    data = generate_synthetic(model, 30, seed=2, T=10.0, record_ll=False)
    rep = evaluate(model, data, metrics=("type",), n_replicates=200)
    n = rep.n_events
    assert abs(rep.type_error.point - 0.5) < 3 * math.sqrt(0.25 / n)
    # the tie always goes to 'a', so errors are exactly the 'b' events
    assert rep.type_error.point == sum(e == "b" for s in data for e in s.types) / n


def _scripted(model, seqs, seed, n_time_samples, eval_multiplier, mc_pool):
    nll_num, n_ev, se, n_t, err, n_y = 0.0, 0, 0.0, 0, 0, 0
    for seq in seqs:
        key = sequence_key(seq)
        mc = draw_mc_times(seq.T, eval_multiplier * max(1, len(seq)), stream(seed, "mc-eval", *key, 0))
        nll_num -= model.log_likelihood(seq, mc).item()
        n_ev += len(seq)
        for k in range(len(seq)):
            cond = model.conditional(seq, k)
            p = predict_time(cond, n_time_samples, stream(seed, "thinning", *key, k))
            se += (p.time - seq.times[k]) ** 2
            n_t += 1
            err += predict_type(cond, seq.times[k]) != seq.types[k]
            n_y += 1
    return nll_num / n_ev, math.sqrt(se / n_t), err / n_y


def test_independent_pass_agrees_exactly():
    model = flat_model(E=3, D=4, L=1, seed=6)
    data = generate_synthetic(model, 4, seed=1, length=(3, 6), record_ll=False)
    rep = evaluate(model, data, n_time_samples=20, seed=9, mc_pool=3, n_replicates=200)
    nll, rmse, err = _scripted(model, list(data), 9, 20, 10, 3)
    assert rep.nll.point == pytest.approx(nll, rel=1e-15)
    assert rep.time_rmse.point == pytest.approx(rmse, rel=1e-15)
    assert rep.type_error.point == err


def test_metrics_do_not_depend_on_sequence_order():
    model = flat_model(E=2, D=4, L=1, seed=3)
    data = list(generate_synthetic(model, 5, seed=4, length=(3, 5), record_ll=False))
    a = evaluate(model, data, n_time_samples=10, mc_pool=2, n_replicates=200)
    b = evaluate(model, data[::-1], n_time_samples=10, mc_pool=2, n_replicates=200)
    for x, y in ((a.nll, b.nll), (a.time_rmse, b.time_rmse), (a.type_error, b.type_error)):
        assert x.point == pytest.approx(y.point, rel=1e-13)


def test_threads_do_not_change_results():
    model = flat_model(E=2, D=4, L=1, seed=3)
    data = list(generate_synthetic(model, 6, seed=4, length=(3, 5), record_ll=False))
    a = evaluate(model, data, n_time_samples=10, mc_pool=2, n_replicates=200)
    b = evaluate(model, data, n_time_samples=10, mc_pool=2, n_replicates=200, threads=4)
    assert a.to_dict() == b.to_dict()


def test_nll_only_report_omits_other_metrics():
    model = flat_model(E=2, seed=1)
    data = generate_synthetic(model, 3, seed=0, length=(2, 3), record_ll=False)
    rep = evaluate(model, data, metrics=("nll",), mc_pool=2, n_replicates=100)
    d = json.loads(rep.to_json())
    assert "nll_per_event" in d and "time_rmse" not in d and "type_error_rate" not in d
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "metric,value,ci_lo,ci_hi" and len(rows) == 2 and rows[1].startswith("nll_per_event,")
    assert d["nll_per_event"]["lo"] <= d["nll_per_event"]["point"] <= d["nll_per_event"]["hi"]


# -- restricted type prediction ---------------------------------------------------------

def test_restricted_patterns():
    possible = ["message(eve,sales,joke)", "message(eve,sales,news)", "message(eve,ops,joke)",
                "message(gina,sales,bug)", "join(frank,sales)"]
    applies, c = restricted_candidates("message(eve,sales,*)", possible, "message(eve,sales,news)")
    assert applies and c == possible[:2]
    applies, c = restricted_candidates("message(eve,sales,*)", possible, "join(frank,sales)")
    assert not applies and c == []
    # a variable must agree with the true event
    assert restricted_set("message(P,T,*)", possible, "message(gina,sales,joke)") == ["message(gina,sales,bug)"]
    assert restricted_set("message*", possible, "message(eve,ops,joke)") == possible[:4]


def test_restricted_prediction_matches_enumeration():
    model = AndttModel(TEAM_FORUMS, TimeEncodingConfig(0.25, 8.0, 4), 1, seed=3)
    seq = EventSequence([1.0, 1.5, 2.0, 2.5, 3.0, 3.4],
                        ["create(sales)", "join(eve,sales)", "message(eve,sales,joke)", "join(gina,sales)",
                         "message(eve,sales,bug)", "message(gina,sales,news)"], 4.0)
    pattern = "message(eve,sales,*)"
    rep = evaluate(model, [seq], metrics=("type",), restrict=pattern, n_replicates=100)
    errors, count = 0, 0
    for k, (e, t) in enumerate(zip(seq.types, seq.times)):
        if not e.startswith("message(eve,sales,"):
            continue
        cands = [f"message(eve,sales,{c})" for c in ("bug", "joke", "news")]
        lam = {c: model.intensity(c, t, seq) for c in cands}
        best = max(cands, key=lambda c: (lam[c], -cands.index(c)))
        assert predict_type(model.conditional(seq, k), t, restricted_set(pattern, model.conditional(seq, k).types, e)) == best
        errors += best != e
        count += 1
    assert count == 2
    assert rep.per_sequence["type_count"][0] == count
    assert rep.per_sequence["type_errors"][0] == errors
