import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geofuse.errors import ConfigError, DataError
from geofuse.geodesy import GeoPoint, build_index, haversine_miles
from geofuse.priors import (
    ABSTAIN,
    LabelHistogram,
    PriorConfig,
    bayes_rescore,
    local_histogram,
    predict_with_prior,
    whitelist_gate,
)


def hist_of(counts, theta=100.0, center=GeoPoint(0, 0)):
    return LabelHistogram(np.asarray(counts, dtype=np.int64), theta, center)


@pytest.fixture()
def small_index():
    # three points of label 2 near the origin, two of label 0 far away
    pts = [
        (0, GeoPoint(0.1, 0.1)),
        (1, GeoPoint(-0.1, 0.2)),
        (2, GeoPoint(0.2, -0.1)),
        (3, GeoPoint(40.0, 90.0)),
        (4, GeoPoint(-40.0, -90.0)),
    ]
    labels = np.array([2, 2, 2, 0, 0])
    return build_index(pts), labels, pts


class TestLocalHistogram:
    def test_empty_neighborhood(self, small_index):
        index, labels, _ = small_index
        h = local_histogram(index, labels, GeoPoint(0.0, 150.0), 10.0, n_labels=3)
        assert h.total == 0 and not h.counts.any()

    def test_three_of_label_two(self, small_index):
        index, labels, _ = small_index
        h = local_histogram(index, labels, GeoPoint(0, 0), 50.0, n_labels=3)
        assert h.counts.tolist() == [0, 0, 3]
        assert h.total == 3

    def test_matches_brute_force_random(self, rng):
        n, c = 300, 5
        pts = [(i, GeoPoint(float(rng.uniform(-60, 60)), float(rng.uniform(-180, 180)))) for i in range(n)]
        labels = rng.integers(0, c, size=n)
        index = build_index(pts)
        for _ in range(25):
            g = GeoPoint(float(rng.uniform(-60, 60)), float(rng.uniform(-180, 180)))
            theta = float(rng.uniform(10, 4000))
            h = local_histogram(index, labels, g, theta, n_labels=c)
            expected = np.zeros(c, dtype=int)
            for i, p in pts:
                if haversine_miles(g, p) <= theta:
                    expected[labels[i]] += 1
            assert h.counts.tolist() == expected.tolist()

    def test_unmapped_id_raises(self, small_index):
        index, _, _ = small_index
        with pytest.raises(DataError):
            local_histogram(index, {0: 1}, GeoPoint(0, 0), 50.0, n_labels=3)


class TestBayesRescore:
    def test_uniform_histogram_preserves_argmax(self):
        p = np.array([0.2, 0.5, 0.3])
        scores = bayes_rescore(p, hist_of([4, 4, 4]))
        assert scores.argmax() == p.argmax()

    def test_two_label_example(self):
        scores = bayes_rescore(np.array([0.6, 0.4]), hist_of([0, 10]), alpha=0.0)
        assert scores == pytest.approx([0.0, 0.4])
        assert scores.argmax() == 1

    def test_three_one_counts(self):
        scores = bayes_rescore(np.array([0.5, 0.5]), hist_of([3, 1]), alpha=0.0)
        assert scores == pytest.approx([0.375, 0.125])

    def test_empty_histogram_fallbacks(self):
        p = np.array([0.7, 0.3])
        assert bayes_rescore(p, hist_of([0, 0]), alpha=0.0, empty_fallback="image_only") == pytest.approx(p)
        assert not bayes_rescore(p, hist_of([0, 0]), alpha=0.0, empty_fallback="abstain").any()

    def test_smoothing_avoids_zero(self):
        scores = bayes_rescore(np.array([0.6, 0.4]), hist_of([0, 10]), alpha=1.0)
        assert scores[0] > 0.0

    def test_invalid_probs(self):
        with pytest.raises(DataError):
            bayes_rescore(np.array([0.9, 0.3]), hist_of([1, 1]))
        with pytest.raises(DataError):
            bayes_rescore(np.array([-0.1, 1.1]), hist_of([1, 1]))


class TestWhitelistGate:
    def test_all_present_is_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert whitelist_gate(p, hist_of([1, 2, 9])) == pytest.approx(p)

    def test_gating_removes_absent_label(self):
        scores = whitelist_gate(np.array([0.7, 0.2, 0.1]), hist_of([0, 5, 0]))
        assert scores.argmax() == 1
        assert scores[0] == 0.0 and scores[2] == 0.0

    def test_never_scores_absent_label(self, rng):
        for _ in range(50):
            c = int(rng.integers(2, 8))
            p = rng.dirichlet(np.ones(c))
            counts = rng.integers(0, 3, size=c)
            scores = whitelist_gate(p, hist_of(counts))
            if counts.sum() == 0:
                continue
            assert not scores[counts == 0].any()

    def test_empty_fallback(self):
        p = np.array([0.6, 0.4])
        assert whitelist_gate(p, hist_of([0, 0]), empty_fallback="image_only") == pytest.approx(p)
        assert not whitelist_gate(p, hist_of([0, 0]), empty_fallback="abstain").any()


class TestPredictWithPrior:
    def test_huge_radius_whitelist_equals_image_only(self, small_index):
        index, labels, _ = small_index
        p = np.array([0.5, 0.2, 0.3])
        cfg = PriorConfig(mode="whitelist", theta_miles=13000.0)
        label, scores = predict_with_prior(p, index, labels, GeoPoint(5, 5), cfg)
        assert label == int(p.argmax())
        # all observed labels present globally, so observed-label scores survive
        assert scores[0] == p[0] and scores[2] == p[2]

    def test_disjoint_habitats_geo_corrects(self, small_index):
        index, labels, _ = small_index
        # base model slightly prefers label 0, but only label 2 lives nearby
        p = np.array([0.55, 0.0, 0.45])
        cfg = PriorConfig(mode="whitelist", theta_miles=100.0)
        label, _ = predict_with_prior(p, index, labels, GeoPoint(0, 0), cfg)
        assert label == 2

    def test_bayes_zero_count_hazard(self, small_index):
        # unsmoothed Bayesian zeroes a nearby-unseen true label (documented hazard)
        index, labels, _ = small_index
        p = np.array([0.9, 0.0, 0.1])
        cfg = PriorConfig(mode="bayesian", theta_miles=100.0, smoothing_alpha=0.0)
        label, scores = predict_with_prior(p, index, labels, GeoPoint(0, 0), cfg)
        assert scores[0] == 0.0
        assert label == 2

    def test_abstain_on_empty(self, small_index):
        index, labels, _ = small_index
        p = np.array([0.5, 0.3, 0.2])
        cfg = PriorConfig(mode="whitelist", theta_miles=1.0, empty_fallback="abstain")
        label, scores = predict_with_prior(p, index, labels, GeoPoint(0.0, 150.0), cfg)
        assert label == ABSTAIN and not scores.any()

    def test_image_only_fallback_on_empty(self, small_index):
        index, labels, _ = small_index
        p = np.array([0.5, 0.3, 0.2])
        cfg = PriorConfig(mode="whitelist", theta_miles=1.0, empty_fallback="image_only")
        label, scores = predict_with_prior(p, index, labels, GeoPoint(0.0, 150.0), cfg)
        assert label == 0 and scores == pytest.approx(p)

    def test_tie_breaks_lowest_index(self, small_index):
        index, labels, _ = small_index
        p = np.array([1 / 3, 1 / 3, 1 / 3])
        cfg = PriorConfig(mode="whitelist", theta_miles=13000.0)
        label, _ = predict_with_prior(p, index, labels, GeoPoint(0, 0), cfg)
        assert label == 0

    @given(scale=st.floats(min_value=0.01, max_value=100.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariance_of_argmax(self, scale):
        # scaling base scores cannot move the argmax of either rule
        p = np.array([0.1, 0.6, 0.3])
        counts = hist_of([2, 1, 4])
        assert bayes_rescore(p, counts).argmax() == (bayes_rescore(p, counts) * scale).argmax()
        assert whitelist_gate(p, counts).argmax() == (whitelist_gate(p, counts) * scale).argmax()

    def test_whitelist_monotone_in_theta(self, rng):
        n = 120
        pts = [(i, GeoPoint(float(rng.uniform(-60, 60)), float(rng.uniform(-180, 180)))) for i in range(n)]
        labels = rng.integers(0, 4, size=n)
        index = build_index(pts)
        g = GeoPoint(10, 10)
        previous = set()
        for theta in (50, 200, 800, 3000, 13000):
            h = local_histogram(index, labels, g, theta, n_labels=4)
            current = set(np.flatnonzero(h.counts > 0).tolist())
            assert previous <= current
            previous = current

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PriorConfig(mode="magic")
        with pytest.raises(ConfigError):
            PriorConfig(theta_miles=0.0)
        with pytest.raises(ConfigError):
            PriorConfig(smoothing_alpha=-1.0)
        with pytest.raises(ConfigError):
            PriorConfig(empty_fallback="skip")
