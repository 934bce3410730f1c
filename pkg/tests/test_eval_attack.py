import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from premiumnn.eval_attack import (
    AttackReport,
    EvalReport,
    attack_simulation,
    cosine,
    dataset_pair_scores,
    draw_wrong_pins,
    evaluate,
    evaluate_accuracy,
    frr_at_far,
    make_pairs,
    pair_scores,
    sign_test_pvalue,
)
from premiumnn.param_select import select_bn_full_layer
from premiumnn.pin_vault import QuantSpec, make_vault, unlock
from premiumnn.tensor_nn import Dataset, LayerSpec, build_model, build_resnet, make_blobs

import oracles


def constant_model(num_classes=3, cls=0):
    m = build_model([LayerSpec("global_avg_pool"), LayerSpec("fully_connected", 2, num_classes)],
                    (2, 2, 2), num_classes)
    m.params[1]["weight"][:] = 0
    m.params[1]["bias"][:] = 0
    m.params[1]["bias"][cls] = 1
    return m


# -- accuracy --------------------------------------------------------------------------

def test_constant_model_accuracy():
    ds = Dataset(np.random.default_rng(0).standard_normal((10, 2, 2, 2)), np.zeros(10, int), 3)
    assert evaluate_accuracy(constant_model(), ds) == 1.0
    with pytest.raises(ValueError):
        evaluate_accuracy(constant_model(), ds.subset([]))


def test_random_model_near_chance():
    n = 5000
    rng = np.random.default_rng(1)
    ds = Dataset(rng.standard_normal((n, 3, 4, 4)), rng.permutation(np.arange(n) % 10), 10)
    m = build_resnet((3, 4, 4), 10, widths=(4,), blocks_per_stage=(1,), seed=5)
    sd = math.sqrt(0.1 * 0.9 / n)
    assert abs(evaluate_accuracy(m, ds) - 0.1) <= 3 * sd


# -- FRR at FAR ------------------------------------------------------------------------

def test_frr_separated_scores():
    out = frr_at_far([0.9, 0.95, 0.99], [0.1, 0.2, 0.5], [0.1, 0.01, 0.0])
    assert set(out.values()) == {0.0}


def test_frr_matches_oracle_on_identical_distributions():
    rng = np.random.default_rng(2)
    s = rng.normal(size=200).tolist()
    for t in (0.5, 0.1, 0.01):
        assert frr_at_far(s, s, [t])[t] == oracles.frr_sweep(s, s, t)


def test_frr_unreachable_target_rejects_everyone():
    assert frr_at_far([1.0, 2.0], [5.0, 5.0], [0.0])[0.0] == 1.0
    assert oracles.frr_sweep([1.0, 2.0], [5.0, 5.0], 0.0) == 1.0


def test_frr_errors():
    with pytest.raises(ValueError):
        frr_at_far([], [1.0], [0.1])


@given(st.lists(st.integers(0, 20), min_size=1, max_size=60),
       st.lists(st.integers(0, 20), min_size=1, max_size=60),
       st.sampled_from([0.0, 0.01, 0.1, 0.25, 0.5, 1.0]))
def test_frr_matches_oracle_with_ties(gen, imp, target):
    gen = [g / 4 for g in gen]
    imp = [i / 4 for i in imp]
    assert frr_at_far(gen, imp, [target])[target] == oracles.frr_sweep(gen, imp, target)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=80),
       st.lists(st.floats(-1, 1), min_size=1, max_size=80))
def test_frr_monotone_in_target(gen, imp):
    targets = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 1.0]
    out = frr_at_far(gen, imp, targets)
    frrs = [out[t] for t in targets]
    assert all(a >= b for a, b in zip(frrs, frrs[1:]))


# -- verification pairs ------------------------------------------------------------------

def test_cosine_examples():
    assert cosine(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert math.isnan(cosine(np.zeros(2), np.ones(2)))


@pytest.fixture(scope="module")
def toy():
    m = build_resnet((3, 8, 8), 4, widths=(4, 6), seed=1)
    ds = make_blobs(40, num_classes=4, image_size=8, seed=0)
    return m, ds


def test_pair_scores_match_dot_product_oracle(toy):
    m, ds = toy
    pairs = make_pairs(ds.labels, 30, seed=0)
    assert sum(p[2] for p in pairs) == 15
    assert all((ds.labels[i] == ds.labels[j]) == same for i, j, same in pairs)
    gen, imp = pair_scores(m, [(ds.images[i], ds.images[j], s) for i, j, s in pairs])
    from premiumnn.eval_attack import embed

    e = embed(m, ds.images)
    want_g, want_i = [], []
    for i, j, same in pairs:
        a, b = e[i].tolist(), e[j].tolist()
        dot = math.fsum(x * y for x, y in zip(a, b))
        s = dot / (math.sqrt(math.fsum(x * x for x in a)) * math.sqrt(math.fsum(y * y for y in b)))
        (want_g if same else want_i).append(s)
    assert np.allclose(gen, want_g, atol=1e-6) and np.allclose(imp, want_i, atol=1e-6)
    g2, i2 = dataset_pair_scores(m, ds, pairs)
    assert np.allclose(g2, gen, atol=1e-6) and np.allclose(i2, imp, atol=1e-6)


def test_identical_images_score_one(toy):
    m, ds = toy
    gen, _ = pair_scores(m, [(ds.images[0], ds.images[0], True)])
    assert gen[0] == pytest.approx(1.0, abs=1e-6)


def test_zero_embedding_pair_skipped(caplog):
    m = build_model([LayerSpec("global_avg_pool"), LayerSpec("fully_connected", 2, 2)], (2, 2, 2), 2)
    x = np.zeros((2, 2, 2), np.float32)
    gen, imp = pair_scores(m, [(x, x, True), (x + 1, x + 2, False)])
    assert gen == [] and len(imp) == 1
    assert "zero-norm" in caplog.text


def test_evaluate_report(toy):
    m, ds = toy
    rep = evaluate(m, ds, "premium", make_pairs(ds.labels, 40, seed=1))
    assert rep.n_samples == 40 and 0 <= rep.accuracy <= 1
    assert set(rep.frr_at_far) == {0.01, 0.001}
    assert all(0 <= v <= 1 for v in rep.frr_at_far.values())
    assert rep.to_json()["mode"] == "premium"
    with pytest.raises(ValueError):
        EvalReport("bogus", 0.5, {}, 1)


# -- attacker ----------------------------------------------------------------------------

def test_wrong_pin_draws():
    pins = draw_wrong_pins(200, seed=0, exclude="0000000000000007", p=127)
    assert len(pins) == 200
    assert all(len(p.digits) == 16 for p in pins)
    assert all(p.value != 7 and p.value % 127 != 0 for p in pins)
    assert [p.digits for p in pins] == [p.digits for p in draw_wrong_pins(200, seed=0, exclude="7", p=127)]


@pytest.fixture(scope="module")
def locked(toy):
    m, ds = toy
    sel = select_bn_full_layer(m, 1)
    pin = "1234567890123456"
    vault = make_vault(sel.true_values, sel.coords, pin, QuantSpec(0.0, 1.5, 8),
                       rng=np.random.default_rng(0))
    return vault, pin


def test_attack_true_pin_gives_zero_degradation(toy, locked):
    m, ds = toy
    vault, pin = locked
    rep = attack_simulation(vault, m, ds, true_pin=pin, pins=[pin])
    assert rep.pins_tried == 1
    assert rep.accuracies[0] == rep.premium_accuracy
    assert rep.min_degradation == 0.0 and rep.mean_degradation == 0.0


def test_attack_report_shape_and_determinism(toy, locked):
    m, ds = toy
    vault, pin = locked
    a = attack_simulation(vault, m, ds, n_pins=5, seed=3, true_pin=pin)
    b = attack_simulation(vault, m, ds, n_pins=5, seed=3, true_pin=pin)
    assert a.to_json() == b.to_json()
    assert a.pins_tried == 5 == len(a.rows)
    assert a.min_accuracy == min(a.accuracies)
    assert a.mean_degradation == pytest.approx(a.premium_accuracy - np.mean(a.accuracies))
    for row in a.rows:
        vals = unlock(vault, row["pin"])
        assert row["values_min"] == min(vals) and 0.0 <= row["values_min"] <= row["values_max"] <= 1.5
    with pytest.raises(ValueError):
        attack_simulation(vault, m, ds, n_pins=0)
    with pytest.raises(ValueError):
        AttackReport(2, [0.5], None, 0.5, 0.5)


def test_sign_test():
    assert sign_test_pvalue(10, 0) == pytest.approx(1 / 1024)
    assert sign_test_pvalue(9, 1) == pytest.approx(11 / 1024)
    assert sign_test_pvalue(0, 0) == 1.0
