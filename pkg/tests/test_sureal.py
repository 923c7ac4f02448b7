import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from cband.errors import UnderdeterminedError
from cband.sureal import RatingsTable, estimate, plain_mos
from panels import planted_panel


def _table(x, contents=None):
    x = np.asarray(x, float)
    E, S = x.shape
    return RatingsTable([f"s{j}" for j in range(S)], [f"e{i:02d}" for i in range(E)],
                        contents or [f"c{i}" for i in range(E)], np.asarray(x, float))


def test_plain_mos_two_ratings():
    assert plain_mos(_table([[40.0, 60.0]]))[0] == 50.0


def test_plain_mos_empty():
    with pytest.raises(ValueError):
        plain_mos(_table(np.full((2, 2), np.nan)))


def test_zero_noise_panel():
    rng = np.random.default_rng(0)
    q = rng.integers(20, 90, 12).astype(float)
    b = np.array([-3.0, 0.0, 1.0, 2.0])
    est = estimate(_table(q[:, None] + b[None, :]))
    # the bias gauge is mean zero, which is how b was planted
    assert np.max(np.abs(est.q - q)) <= 0.5
    np.testing.assert_allclose(est.b, b, atol=0.5)
    np.testing.assert_allclose(est.v, 1e-3, rtol=1e-6)


def test_unbiased_zero_noise_matches_plain_mos():
    q = np.random.default_rng(1).uniform(10, 90, 10)
    t = _table(np.repeat(q[:, None], 5, axis=1))
    np.testing.assert_allclose(estimate(t).q, plain_mos(t), atol=0.5)


def test_two_subject_shift():
    rng = np.random.default_rng(2)
    base = np.round(rng.uniform(20, 80, 15))
    est = estimate(_table(np.stack([base + 10, base], axis=1)), with_ambiguity=False)
    assert est.b[0] - est.b[1] == pytest.approx(10.0, abs=0.5)


def test_outlier_subject_incomplete_panel():
    """Each stimulus is rated by two of three subjects, one of whom sits 30 points high."""
    rng = np.random.default_rng(3)
    E = 30
    q = rng.uniform(20, 70, E)
    bias = np.array([30.0, 0.0, 0.0])
    x = q[:, None] + bias[None, :] + rng.normal(0, 1.0, (E, 3))
    for i in range(E):
        x[i, i % 3] = np.nan
    t = _table(np.round(x))
    est = estimate(t, with_ambiguity=False)
    # truth lives in the same gauge as the estimates: biases sum to zero
    truth = q + bias.mean()
    closer = np.abs(est.q - truth) < np.abs(plain_mos(t) - truth)
    assert closer.mean() >= 0.8


@pytest.mark.parametrize("seed", range(3))
def test_loglik_non_decreasing(seed):
    est = estimate(planted_panel(seed)[0])
    h = np.array(est.loglik_history)
    assert np.all(np.diff(h) >= -1e-9 * np.abs(h[1:]))
    assert not est.numerical_flag
    assert est.loglik == pytest.approx(h.max())


def test_likelihood_climbs_as_floor_drops():
    """With one rating per pair a subject can be fitted exactly, so the supremum sits on the floor."""
    t = planted_panel(0)[0]
    hi, lo = estimate(t, v_floor=1e-3), estimate(t, v_floor=1e-6)
    assert lo.loglik > hi.loglik + 10
    assert np.isclose(hi.v, 1e-3).sum() >= 1
    assert np.min(lo.v) == pytest.approx(1e-6)


def test_planted_panel_coarse_recovery():
    t, q, b, v = planted_panel(0)
    est = estimate(t)
    assert np.max(np.abs(est.q - q)) < 5
    assert np.max(np.abs(est.b - b)) < 4
    assert spearmanr(est.v, v)[0] > 0.5
    assert np.all(est.v >= 1e-3) and np.all(est.a >= 0)


@settings(max_examples=5)
@given(k=st.floats(-50, 50))
def test_translation(k):
    t = planted_panel(4)[0]
    a = estimate(t)
    b = estimate(RatingsTable(t.subject_ids, t.stimulus_ids, t.content_ids, t.scores + k))
    np.testing.assert_allclose(b.q, a.q + k, atol=1e-5)
    np.testing.assert_allclose(b.b, a.b, atol=1e-5)
    np.testing.assert_allclose(b.v, a.v, atol=1e-5)
    np.testing.assert_allclose(b.a, a.a, atol=1e-5)


def test_permutation_equivariance():
    t = planted_panel(5)[0]
    rows = np.random.default_rng(0).permutation(len(t.stimulus_ids))
    cols = np.random.default_rng(1).permutation(len(t.subject_ids))
    p = RatingsTable([t.subject_ids[j] for j in cols], [t.stimulus_ids[i] for i in rows],
                     [t.content_ids[i] for i in rows], t.scores[np.ix_(rows, cols)])
    a, b = estimate(t), estimate(p)
    np.testing.assert_allclose(b.q, a.q[rows], atol=1e-6)
    np.testing.assert_allclose(b.b, a.b[cols], atol=1e-6)


def test_underdetermined():
    x = np.array([[50.0, 60.0], [55.0, np.nan]])
    with pytest.raises(UnderdeterminedError):
        estimate(_table(x))
    with pytest.raises(UnderdeterminedError):
        estimate(_table(np.array([[50.0], [60.0]])))


def test_without_ambiguity():
    est = estimate(planted_panel(6)[0], with_ambiguity=False)
    assert np.all(est.a == 0) and np.all(est.a_se == 0)


def test_intervals_and_json():
    est = estimate(planted_panel(7)[0])
    ci = est.ci95("q")
    assert ci.shape == (20, 2) and np.all(ci[:, 0] < est.q) and np.all(est.q < ci[:, 1])
    d = json.loads(json.dumps(est.to_json()))
    assert d["schema_version"] == 1 and len(d["quality_scores"]) == 20
    assert len(d["subject_bias_ci95"]) == 15 and len(d["content_ambiguity"]) == 5


def test_csv_round_trip(tmp_path):
    t = planted_panel(8)[0]
    p = tmp_path / "r.csv"
    lines = ["subject_id,stimulus_id,content_id,score"] + [f"{s},{e},{c},{x}" for s, e, c, x in t.entries()]
    p.write_text("\n".join(lines) + "\n")
    back = RatingsTable.from_csv(str(p))
    np.testing.assert_array_equal(back.scores, t.scores)
    assert back.content_ids == t.content_ids


def test_entries_validation():
    with pytest.raises(ValueError):
        RatingsTable.from_entries([("a", "e", "c1", 1), ("b", "e", "c2", 2)])
    with pytest.raises(ValueError):
        RatingsTable.from_entries([("a", "e", "c1", 1), ("a", "e", "c1", 2)])
