import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cosparse.dataset_io import BBox, ImageRecord, ProposalSet
from cosparse.detector import (
    Detector,
    DimensionError,
    TrainConfig,
    entropy,
    gradient,
    load_detector,
    normalize_scores,
    objective,
    save_detector,
    score_proposals,
    select_top_proposal,
    softplus,
    train,
)


def make_image(feats, objectness=None, image_id="x", boxes=None):
    feats = np.asarray(feats, dtype=np.float64)
    m = len(feats)
    if objectness is None:
        objectness = np.ones(m)
    if boxes is None:
        boxes = [(j, 0, j + 1, 1) for j in range(m)]
    return ImageRecord(image_id, max(b[2] for b in boxes), max(b[3] for b in boxes),
                       ProposalSet(np.array(boxes), np.asarray(objectness, float)), feats)


def random_instance(rng, n_max=3, m_max=10, k_max=8):
    k = int(rng.integers(1, k_max + 1))
    images = []
    for i in range(int(rng.integers(1, n_max + 1))):
        m = int(rng.integers(1, m_max + 1))
        images.append(make_image(rng.normal(0, 1.5, (m, k)), rng.uniform(0, 1, m), f"i{i}"))
    d = Detector(rng.normal(0, 1, k), float(rng.normal()))
    return d, images


# --- softplus -----------------------------------------------------------------

def test_softplus_zero():
    assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-12)


def test_softplus_large():
    assert abs(softplus(1000.0) - 1000.0) < 1e-9


def test_softplus_matches_direct_formula():
    assert softplus(-3.0) == pytest.approx(oracles.softplus_direct(-3.0), abs=1e-12)


@given(st.floats(-1e6, 1e6))
def test_softplus_finite_nonnegative(x):
    y = softplus(x)
    assert math.isfinite(y) and y >= 0 and y >= x


# --- scoring ------------------------------------------------------------------

def test_zero_detector_scores_ln2(rng):
    feats = rng.normal(size=(5, 3))
    s = score_proposals(Detector.zeros(3), feats, np.ones(5), use_objectness=False)
    np.testing.assert_allclose(s, math.log(2), rtol=0, atol=1e-15)


def test_zero_detector_objectness_weighted():
    s = score_proposals(Detector.zeros(2), np.zeros((2, 2)), [0.5, 1.0], use_objectness=True)
    np.testing.assert_allclose(s, [0.5 * math.log(2), math.log(2)], atol=1e-15)


def test_scores_match_loop_oracle(rng):
    d = Detector(rng.normal(size=6), 0.3)
    feats = rng.normal(size=(10, 6))
    obj = rng.uniform(size=10)
    for use_obj in (False, True):
        got = score_proposals(d, feats, obj, use_obj)
        want = oracles.scores_loop(d.w.tolist(), d.b, feats.tolist(), obj.tolist(), use_obj)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_score_dimension_mismatch():
    with pytest.raises(DimensionError):
        score_proposals(Detector.zeros(3), np.zeros((2, 4)), np.ones(2))
    with pytest.raises(DimensionError):
        score_proposals(Detector.zeros(3), np.zeros((2, 3)), np.ones(5))


@given(arrays(np.float64, (6, 3), elements=st.floats(-50, 50)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)), st.floats(-5, 5))
def test_zero_objectness_gives_zero_score(feats, w, b):
    obj = np.array([0.0, 1.0, 0.0, 0.5, 0.0, 1.0])
    s = score_proposals(Detector(w, b), feats, obj, use_objectness=True)
    assert np.all(s[obj == 0] == 0.0)


# --- normalization and entropy ----------------------------------------------

def test_normalize_all_zero_is_uniform():
    np.testing.assert_allclose(normalize_scores([0, 0], 0.3), [0.5, 0.5])


def test_normalize_symmetric():
    np.testing.assert_allclose(normalize_scores([1, 1, 1, 1], 0.01), [0.25] * 4)


def test_normalize_hand_arithmetic():
    # (9.99 + 0.01) / 10.02 and 0.01 / 10.02
    np.testing.assert_allclose(normalize_scores([9.99, 0, 0], 0.01),
                               [10 / 10.02, 0.01 / 10.02, 0.01 / 10.02], atol=1e-12)
    np.testing.assert_allclose(normalize_scores([9.99, 0, 0], 0.01), [0.998004, 0.000998, 0.000998], atol=1e-4)


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 1e4)), st.floats(1e-6, 1.0))
def test_normalize_is_distribution(s, eps):
    p = normalize_scores(s, eps)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-9


def test_entropy_uniform():
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(math.log(8), abs=1e-12)


def test_entropy_near_one_hot():
    d = 1e-9
    assert entropy([1 - 3 * d, d, d, d]) < 1e-6


def test_entropy_hand_value():
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-12)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 100)))
def test_entropy_bounds(s):
    p = normalize_scores(s, 1e-2)
    h = entropy(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-12


# --- objective ---------------------------------------------------------------

def test_objective_zero_detector_is_ln_m(rng):
    img = make_image(rng.normal(size=(7, 3)))
    cfg = TrainConfig(use_objectness=False)
    assert objective(Detector.zeros(3), [img], cfg) == pytest.approx(math.log(7), abs=1e-12)


def test_objective_regularizer_only():
    # M = 1 makes every entropy term exactly zero
    img = make_image([[1.0, -2.0]])
    d = Detector([2.0, 0.0], 0.5)
    assert objective(d, [img], TrainConfig(lam=1.0)) == pytest.approx(4.0, abs=1e-12)


def test_objective_matches_straight_line(rng):
    images = [make_image(rng.normal(size=(5, 4)), rng.uniform(size=5), f"i{i}") for i in range(3)]
    d = Detector(rng.normal(size=4), -0.2)
    for use_obj in (False, True):
        cfg = TrainConfig(lam=0.7, epsilon=0.05, use_objectness=use_obj)
        want = oracles.objective_straight_line(
            d.w.tolist(), d.b, [(im.features.tolist(), im.proposals.objectness.tolist()) for im in images],
            cfg.lam, cfg.epsilon, use_obj)
        assert objective(d, images, cfg) == pytest.approx(want, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objective_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    d, images = random_instance(rng)
    cfg = TrainConfig(lam=0.5)
    permuted = []
    for im in images:
        order = rng.permutation(im.num_proposals)
        permuted.append(make_image(im.features[order], im.proposals.objectness[order], im.id))
    assert objective(d, permuted, cfg) == pytest.approx(objective(d, images, cfg), abs=1e-12)


# --- gradient ----------------------------------------------------------------

def test_gradient_identical_features_is_zero(rng):
    img = make_image(np.tile(rng.normal(size=4), (6, 1)))
    d = Detector(rng.normal(size=4), 0.4)
    g = gradient(d, [img], TrainConfig(lam=0.0, use_objectness=False))
    np.testing.assert_allclose(g.d_w, 0.0, atol=1e-12)
    assert abs(g.d_b) < 1e-12


def test_gradient_single_proposal_is_regularizer(rng):
    img = make_image(rng.normal(size=(1, 5)))
    d = Detector(rng.normal(size=5), 0.1)
    g = gradient(d, [img], TrainConfig(lam=1.0))
    np.testing.assert_allclose(g.d_w, 2 * d.w, atol=1e-15)
    assert g.d_b == 0.0


def check_against_finite_differences(d, images, cfg, h=1e-5, rtol=1e-4):
    """Per-coordinate relative check; the absolute floor covers coordinates where
    both gradients vanish and central differences only see round-off (~1e-11)."""
    g = gradient(d, images, cfg)
    theta = np.append(d.w, d.b)
    fd = oracles.central_difference(lambda t: objective(Detector(t[:-1], t[-1]), images, cfg), theta, h)
    analytic = np.append(g.d_w, g.d_b)
    err = np.abs(analytic - fd)
    scale = np.maximum(np.abs(analytic), np.abs(fd))
    ok = err <= rtol * scale + 1e-8
    return bool(ok.all()), float(np.max(err / np.maximum(scale, 1e-8)))


def test_gradient_random_instance(rng):
    k = 6
    images = [make_image(rng.normal(size=(7, k)), rng.uniform(size=7), f"i{i}") for i in range(2)]
    d = Detector(rng.normal(size=k), 0.2)
    for cfg in (TrainConfig(lam=1.0), TrainConfig(lam=0.0, use_objectness=False)):
        ok, worst = check_against_finite_differences(d, images, cfg)
        assert ok, worst


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1.0]), st.booleans())
def test_gradient_property(seed, lam, use_obj):
    d, images = random_instance(np.random.default_rng(seed))
    ok, worst = check_against_finite_differences(d, images, TrainConfig(lam=lam, use_objectness=use_obj))
    assert ok, worst


def test_gradient_empty_batch():
    with pytest.raises(ValueError):
        gradient(Detector.zeros(2), [], TrainConfig())


# --- training ----------------------------------------------------------------

def test_train_zero_epochs_returns_init(rng):
    images = [make_image(rng.normal(size=(4, 3)))]
    cfg = TrainConfig(total_epochs=0, seed=5)
    d, log = train(images, cfg)
    expected = np.random.default_rng(5).normal(0.0, cfg.init_sigma, size=3)
    np.testing.assert_array_equal(d.w, expected)
    assert d.b == 0.0
    assert len(log.objectives) == 1
    assert log.objectives[0] == objective(d, images, cfg)


def test_default_schedule():
    cfg = TrainConfig()
    assert [cfg.learning_rate(e) for e in (0, 9)] == [0.1, 0.1]
    assert all(cfg.learning_rate(e) == pytest.approx(0.01) for e in range(10, 20))


def test_train_log_schedule(small_synth):
    _, data = small_synth
    _, log = train(data, TrainConfig())
    assert len(log.objectives) == 21
    assert log.learning_rates[:10] == [0.1] * 10
    assert log.learning_rates[10:] == pytest.approx([0.01] * 10)


def test_train_bit_deterministic(small_synth):
    _, data = small_synth
    d1, log1 = train(data, TrainConfig(seed=9))
    d2, log2 = train(data, TrainConfig(seed=9))
    assert d1.w.tobytes() == d2.w.tobytes() and d1.b == d2.b
    assert log1.objectives == log2.objectives


def test_train_concentrates_on_planted(synth_dir):
    # longer schedule than the default: lets the regularized detector sharpen p past 0.5
    _, data = synth_dir
    cfg = TrainConfig(total_epochs=100, lr_decay_every=50, seed=7)
    d, log = train(data, cfg)
    assert log.objectives[-1] < log.objectives[0]
    hits = 0
    for img in data.images:
        p = normalize_scores(score_proposals(d, img.features, img.proposals), cfg.epsilon)
        planted = next(j for j in range(img.num_proposals) if img.proposals.box(j) == img.ground_truth[0])
        hits += p[planted] > 0.5
    assert hits >= 0.9 * data.n


def test_train_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        train([make_image(rng.normal(size=(3, 2)), image_id="a"),
               make_image(rng.normal(size=(3, 3)), image_id="b")], TrainConfig())


# --- top proposal ------------------------------------------------------------

def test_top_single_proposal():
    img = make_image([[0.3]], boxes=[(1, 2, 3, 4)])
    assert select_top_proposal(Detector([1.0]), img) == BBox(1, 2, 3, 4)


def test_top_tie_takes_first():
    img = make_image([[1.0], [1.0]], boxes=[(0, 0, 2, 2), (1, 1, 3, 3)])
    assert select_top_proposal(Detector([0.5]), img, use_objectness=False) == BBox(0, 0, 2, 2)


def test_top_matches_exhaustive_scan(rng):
    img = make_image(rng.normal(size=(50, 4)), rng.uniform(size=50))
    d = Detector(rng.normal(size=4), 0.1)
    s = oracles.scores_loop(d.w.tolist(), d.b, img.features.tolist(), img.proposals.objectness.tolist(), True)
    best = 0
    for j in range(1, len(s)):
        if s[j] > s[best]:
            best = j
    assert select_top_proposal(d, img) == img.proposals.box(best)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_top_invariant_to_positive_scaling(seed, c):
    rng = np.random.default_rng(seed)
    img = make_image(rng.normal(size=(12, 3)))
    d = Detector(rng.normal(size=3), float(rng.normal()))
    scaled = Detector(c * d.w, c * d.b)
    z = img.features @ d.w + d.b
    if np.sort(z)[-1] - np.sort(z)[-2] < 1e-9:
        return
    assert select_top_proposal(d, img, False) == select_top_proposal(scaled, img, False)


# --- serialization -----------------------------------------------------------

def test_detector_roundtrip(tmp_path, rng):
    d = Detector(rng.normal(size=9), -1.234567890123)
    cfg = TrainConfig(lam=0.5, seed=3)
    save_detector(tmp_path / "d.json", d, cfg)
    d2, cfg2 = load_detector(tmp_path / "d.json")
    assert d2 == d and cfg2 == cfg
