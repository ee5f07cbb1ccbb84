import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from oracles import brute_c_index, empirical_auc
from prcsurv.metrics import (
    TDAUC_GRID,
    Metric,
    MetricError,
    MetricRequest,
    c_index,
    default_span,
    evaluate,
    kaplan_meier,
    td_auc,
)


def _data(rng, n, censor=0.3, strength=1.0, ties=False):
    x = rng.normal(size=n)
    t = rng.exponential(np.exp(-strength * x)) * 3
    if ties:
        t = np.ceil(t * 2) / 2
    status = (rng.random(n) > censor).astype(int)
    return x, (t, status)


# --------------------------------------------------------------------------
# C index
# --------------------------------------------------------------------------


def test_c_identical_scores():
    rng = np.random.default_rng(0)
    _, surv = _data(rng, 50)
    assert c_index(np.zeros(50), surv) == 0.5


def test_c_perfect_concordance():
    t = np.random.default_rng(1).exponential(size=40)
    assert c_index(-t, (t, np.ones(40))) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_c_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    x, (t, s) = _data(rng, 60, ties=seed % 2 == 0)
    lp = np.round(x, 1) if seed % 3 == 0 else x
    tau = np.quantile(t, 0.7) if seed % 4 == 0 else None
    assert c_index(lp, (t, s), tau) == pytest.approx(brute_c_index(lp, t, s, tau), abs=1e-14)


def test_c_blocks_agree_with_oracle_beyond_block_size():
    rng = np.random.default_rng(2)
    x, (t, s) = _data(rng, 1300, censor=0.1)
    assert c_index(x, (t, s)) == pytest.approx(brute_c_index(x, t, s), abs=1e-13)


def test_c_random_scores_null():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        _, surv = _data(rng, 2000)
        vals.append(c_index(rng.normal(size=2000), surv))
    vals = np.array(vals)
    # the sampling sd at n=2000 is about 0.009, so single seeds may stray
    assert abs(vals.mean() - 0.5) <= 0.02
    assert np.mean(np.abs(vals - 0.5) <= 0.02) >= 0.9


def test_c_no_usable_pairs():
    with pytest.raises(MetricError):
        c_index([1.0, 2.0, 3.0], ([1.0, 2.0, 3.0], [0, 0, 0]))
    with pytest.raises(MetricError):
        c_index([1.0, 2.0], ([1.0, 1.0], [1, 1]))


def test_c_rejects_non_finite():
    with pytest.raises(ValueError):
        c_index([1.0, np.nan], ([1.0, 2.0], [1, 1]))


# --------------------------------------------------------------------------
# Time-dependent AUC
# --------------------------------------------------------------------------


def test_auc_perfect_separation():
    t = np.arange(1.0, 21.0)
    lp = -t
    # with neighbourhoods reduced to tied markers the estimate is exact
    assert td_auc(lp, (t, np.ones(20)), 10.5, span=0.0) == 1.0
    # the default span borrows survival information from neighbours, which
    # smooths the estimate near the cutpoint
    assert td_auc(lp, (t, np.ones(20)), 10.5) > 0.9


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_empirical_on_uncensored_data(seed):
    rng = np.random.default_rng(seed)
    x, (t, _) = _data(rng, 500, censor=0.0)
    h = float(np.median(t))
    got = td_auc(x, (t, np.ones(500)), h)
    assert got == pytest.approx(empirical_auc(x, t, h), abs=0.02)


def test_auc_zero_span_is_empirical_auc():
    rng = np.random.default_rng(9)
    x, (t, _) = _data(rng, 200, censor=0.0)
    h = float(np.quantile(t, 0.4))
    assert td_auc(x, (t, np.ones(200)), h, span=0.0) == pytest.approx(empirical_auc(x, t, h), abs=1e-12)


def test_auc_rank_transform_identical():
    rng = np.random.default_rng(3)
    x, surv = _data(rng, 300)
    assert td_auc(rankdata(x), surv, 2.0) == td_auc(x, surv, 2.0)


def test_auc_errors():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(MetricError):
        td_auc([1, 2, 3, 4], (t, [0, 0, 1, 1]), 2.5)  # no events by t
    with pytest.raises(MetricError):
        td_auc([1, 2, 3, 4], (t, [1, 1, 1, 1]), 4.0)  # nobody at risk after t


def test_default_span():
    assert default_span(1) == 0.25
    assert default_span(300) == pytest.approx(0.25 * 300 ** -0.2)


# --------------------------------------------------------------------------
# Shared properties
# --------------------------------------------------------------------------


transforms = [np.exp, np.arctan, lambda v: 3 * v + 2, lambda v: v**3, lambda v: rankdata(v)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(0, len(transforms) - 1))
def test_monotone_transform_invariance(seed, k):
    rng = np.random.default_rng(seed)
    x, surv = _data(rng, 120, ties=True)
    x = np.round(x, 2)
    fx = transforms[k](x)
    assert c_index(fx, surv) == c_index(x, surv)
    h = float(np.median(surv[0]))
    assert td_auc(fx, surv, h) == pytest.approx(td_auc(x, surv, h), abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_negation_complements(seed):
    rng = np.random.default_rng(seed)
    x, surv = _data(rng, 80)
    c = c_index(x, surv)
    assert 0 <= c <= 1
    assert c_index(-x, surv) == pytest.approx(1 - c, abs=1e-14)
    h = float(np.median(surv[0]))
    a = td_auc(x, surv, h)
    assert 0 <= a <= 1
    assert td_auc(-x, surv, h) == pytest.approx(1 - a, abs=1e-12)


# --------------------------------------------------------------------------
# Kaplan-Meier
# --------------------------------------------------------------------------


def test_km_no_events():
    km = kaplan_meier(([1.0, 2.0, 3.0], [0, 0, 0]))
    np.testing.assert_array_equal(km([0.0, 1.5, 10.0]), [1.0, 1.0, 1.0])


def test_km_three_events():
    km = kaplan_meier(([1.0, 2.0, 3.0], [1, 1, 1]))
    np.testing.assert_allclose(km([0.5, 1.0, 2.0, 3.0]), [1.0, 2 / 3, 1 / 3, 0.0], rtol=1e-15)


def test_km_hand_table():
    time = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0]
    status = [1, 1, 0, 1, 0, 1]
    table = kaplan_meier((time, status)).table()
    expected = [
        # time, at risk, events, censored, survival
        (1.0, 6, 1, 0, 5 / 6),
        (2.0, 5, 1, 1, 2 / 3),
        (3.0, 3, 1, 0, 4 / 9),
        (4.0, 2, 0, 1, 4 / 9),
        (5.0, 1, 1, 0, 0.0),
    ]
    assert len(table) == len(expected)
    for row, (t, r, e, c, s) in zip(table, expected):
        assert (row["time"], row["n_risk"], row["n_events"], row["n_censored"]) == (t, r, e, c)
        assert row["survival"] == pytest.approx(s, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(times=st.lists(st.floats(0.01, 100, allow_nan=False), min_size=1, max_size=40))
def test_km_uncensored_is_one_minus_ecdf(times):
    t = np.array(times)
    km = kaplan_meier((t, np.ones(len(t))))
    grid = np.concatenate([t, t + 1e-3, [0.0]])
    ecdf = (t[None, :] <= grid[:, None]).mean(axis=1)
    np.testing.assert_allclose(km(grid), 1 - ecdf, atol=1e-12)
    S = km(np.sort(grid))
    assert np.all(np.diff(S) <= 0) and km(0.0) == 1.0


# --------------------------------------------------------------------------
# Requests and batch evaluation
# --------------------------------------------------------------------------


def test_metric_request_validation_and_labels():
    assert MetricRequest(Metric.C_INDEX).label == "C"
    assert MetricRequest("TDAUC", horizon=5).label == "tdAUC(5)"
    assert MetricRequest("TDAUC", horizon=2.5).label == "tdAUC(2.5)"
    with pytest.raises(ValueError):
        MetricRequest(Metric.TDAUC)
    with pytest.raises(ValueError):
        MetricRequest(Metric.TDAUC, horizon=-1)
    with pytest.raises(ValueError):
        MetricRequest(Metric.C_INDEX, tau=0)
    assert TDAUC_GRID == (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)


def test_evaluate_flags_undefined_metric():
    rng = np.random.default_rng(4)
    x, (t, s) = _data(rng, 100)
    rows = evaluate(x, (t, s), [MetricRequest("C_INDEX"), MetricRequest("TDAUC", horizon=1.0),
                                MetricRequest("TDAUC", horizon=t.max() + 1)])
    assert [r["metric"] for r in rows] == ["C_INDEX", "TDAUC", "TDAUC"]
    assert rows[0]["value"] == c_index(x, (t, s)) and rows[0]["flags"] == ""
    assert rows[1]["horizon"] == 1.0 and rows[1]["value"] == td_auc(x, (t, s), 1.0)
    assert np.isnan(rows[2]["value"]) and rows[2]["flags"]
