import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muxdetect.errors import InvalidInputError, ShapeError, UndefinedMetricError
from muxdetect.metrics import (
    auroc,
    channel_metrics,
    channel_report,
    confusion,
    ecdf,
    export_distributions,
    ks_distance,
)


def brute_auroc(scores, labels):
    fake = [s for s, y in zip(scores, labels) if y == 1]
    real = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if f > r else 0.5 if f == r else 0.0 for f in fake for r in real)
    return wins / (len(fake) * len(real))


def brute_ks(a, b):
    best = 0.0
    for t in list(a) + list(b):
        fa = sum(x <= t for x in a) / len(a)
        fb = sum(x <= t for x in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def test_confusion_hand_tally():
    scores = [0.9, -0.2, 0.0, 0.4, -0.7, 0.1]
    labels = [1, 1, 1, 0, 0, 0]
    m = confusion(scores, labels)
    # the 0.0 score sits on the threshold and is called real
    assert (m.tp, m.fn, m.fp, m.tn) == (1, 2, 2, 1)
    assert m.accuracy == pytest.approx(2 / 6)
    assert m.sensitivity == pytest.approx(1 / 3) and m.specificity == pytest.approx(1 / 3)


def test_confusion_undefined_rates():
    m = confusion([0.5, 0.2], [1, 1])
    assert m.specificity is None and m.sensitivity == 1.0
    with pytest.raises(InvalidInputError):
        confusion([], [])
    with pytest.raises(ShapeError):
        confusion([1.0], [0, 1])


def test_auroc_hand_value():
    # 3 of 4 fake-real pairs are ordered correctly
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert auroc([1.0, 1.0], [0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


def test_ks_hand_values():
    assert ks_distance([1, 2, 3, 4], [3, 4, 5, 6]) == pytest.approx(0.5)
    assert ks_distance([0, 1], [0, 1]) == 0.0
    assert ks_distance([0, 1], [2, 3]) == 1.0
    with pytest.raises(InvalidInputError):
        ks_distance([], [1.0])


samples = st.lists(st.integers(-5, 5).map(lambda k: k / 2), min_size=1, max_size=50)


@settings(max_examples=200, deadline=None)
@given(a=samples, b=samples)
def test_ks_matches_brute_force(a, b):
    assert ks_distance(a, b) == brute_ks(a, b)


@settings(max_examples=200, deadline=None)
@given(data=st.lists(st.tuples(st.integers(-4, 4).map(float), st.integers(0, 1)), min_size=2, max_size=100))
def test_auroc_matches_brute_force(data):
    scores, labels = zip(*data)
    if len(set(labels)) < 2:
        with pytest.raises(UndefinedMetricError):
            auroc(scores, labels)
        return
    assert math.isclose(auroc(scores, labels), brute_auroc(scores, labels), rel_tol=0, abs_tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=samples, b=samples, shift=st.floats(-3, 3), scale=st.floats(0.1, 10))
def test_ks_invariant_under_monotone_maps(a, b, shift, scale):
    ta = [scale * x + shift for x in a]
    tb = [scale * x + shift for x in b]
    assert ks_distance(ta, tb) == pytest.approx(ks_distance(a, b), abs=1e-12)
    assert ks_distance(a, b) == ks_distance(b, a)


def test_ecdf_right_continuous():
    assert ecdf([1, 2, 2, 3], [0.5, 1, 2, 2.5, 3]).tolist() == [0, 0.25, 0.75, 0.75, 1.0]


def test_channel_report_population_std():
    streams = [
        (np.array([0.5, -0.5]), np.array([1, 0])),  # perfect
        (np.array([0.5, 0.5]), np.array([0, 0])),  # all wrong, no fakes
    ]
    rep = channel_report(streams)
    assert rep.mean["accuracy"] == pytest.approx(0.5)
    assert rep.std["accuracy"] == pytest.approx(0.5)  # population, not sample (would be 0.707)
    assert rep.mean["sensitivity"] == 1.0  # channel 2 has no fakes and is skipped
    assert rep.overall.n == 4
    d = rep.to_dict()
    assert d["std_kind"] == "population" and len(d["channels"]) == 2


def test_channel_metrics_single_class_leaves_ranking_metrics_empty():
    m = channel_metrics([0.1, 0.2], [0, 0], v=3)
    assert m.auroc is None and m.ks is None and m.v == 3


def test_export_distributions():
    rng = np.random.default_rng(1)
    real, fake = rng.normal(-0.3, 0.2, 80), rng.normal(0.3, 0.2, 60)
    d = export_distributions(real, fake, bins=20)
    assert d["counts_real"].sum() == 80 and d["counts_fake"].sum() == 60
    assert len(d["edges"]) == 21
    assert d["cdf_real"][0] == 0 and d["cdf_fake"][0] == 0
    assert d["cdf_real"][-1] == 1 and d["cdf_fake"][-1] == 1
    assert np.max(np.abs(d["cdf_real"] - d["cdf_fake"])) == pytest.approx(ks_distance(real, fake))
    with pytest.raises(InvalidInputError):
        export_distributions(real, fake, bins=1)
