import numpy as np
import pytest

from skelex import gt
from skelex import network as N
from skelex import tensor as T

RF = (14, 40, 92, 196)


def toy_spec(channels=(4, 6)):
    stages = []
    for i, ch in enumerate(channels):
        pool = T.PoolSpec(2, 2) if i < len(channels) - 1 else None
        stages.append(T.StageSpec(convs=(T.ConvSpec(3, ch), T.ConvSpec(3, ch)),
                                  pool=pool))
    return T.BackboneSpec(stages=tuple(stages), in_channels=1)


def random_targets(rng, shape, rf, rho=1.2):
    scale = np.zeros(shape)
    pick = rng.random(shape) < 0.3
    scale[pick] = rng.uniform(1.0, rf[-1] / rho - 0.5, pick.sum())
    z = gt.quantize_scale_map(scale, rf, rho)
    targets = [gt.stage_targets(z, scale, i, rf, rho)
               for i in range(1, len(rf) + 1)]
    return z, scale, targets


def perturb(net, seed=7, amount=0.05):
    rng = np.random.default_rng(seed)
    for p in net.parameters():
        p.value += (rng.standard_normal(p.value.shape) * amount).astype(
            np.float32)


# -- class balance weights ---------------------------------------------------

def test_beta_counts_example():
    cls = np.concatenate([np.zeros(100, int), np.ones(20, int),
                          np.full(4, 2)])
    beta = N.class_balance_weights(cls.reshape(4, 31), 2)
    assert np.allclose(beta, [1 / 31, 5 / 31, 25 / 31])


def test_beta_equal_counts():
    cls = np.array([[0, 1], [1, 0]])
    assert np.allclose(N.class_balance_weights(cls, 1), [0.5, 0.5])


def test_beta_single_class():
    beta = N.class_balance_weights(np.zeros((3, 3), int), 2)
    assert beta[0] == 1.0 and beta[1] == 0.0 and beta[2] == 0.0


def test_beta_sums_to_one_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        cls = rng.integers(0, k + 1, size=(8, 8))
        beta = N.class_balance_weights(cls, k)
        assert abs(beta.sum() - 1.0) <= 1e-12


# -- localization loss -------------------------------------------------------

def test_loc_loss_confident_prediction_goes_to_zero():
    cls = np.array([[0, 1], [1, 0]])
    k1 = 2
    scores = np.zeros((k1, 2, 2))
    for y in range(2):
        for x in range(2):
            scores[cls[y, x], y, x] = 50.0
    beta = N.class_balance_weights(cls, 1)
    loss, _ = N.weighted_softmax_loss(scores, cls, beta)
    assert loss < 1e-9


def test_loc_loss_uniform_two_class_closed_form():
    # uniform logits, two balanced classes: every pixel contributes
    # beta[z] * log 2 = 0.5 * log 2
    cls = np.array([[0, 1], [1, 0]])
    scores = np.zeros((2, 2, 2))
    beta = np.array([0.5, 0.5])
    loss, _ = N.weighted_softmax_loss(scores, cls, beta)
    assert loss == pytest.approx(np.log(2) / 2, rel=1e-12)


def test_loc_loss_gradient_matches_fd():
    rng = np.random.default_rng(1)
    cls = rng.integers(0, 3, size=(6, 6))
    scores = rng.standard_normal((3, 6, 6))
    beta = N.class_balance_weights(cls, 2)

    loss, grad = N.weighted_softmax_loss(scores, cls, beta)
    step = 1e-5
    worst = 0.0
    for _ in range(100):
        idx = tuple(rng.integers(s) for s in scores.shape)
        old = scores[idx]
        scores[idx] = old + step
        lp = N.weighted_softmax_loss(scores, cls, beta)[0]
        scores[idx] = old - step
        lm = N.weighted_softmax_loss(scores, cls, beta)[0]
        scores[idx] = old
        num = (lp - lm) / (2 * step)
        worst = max(worst, abs(grad[idx] - num) / max(1.0, abs(num)))
    assert worst <= 1e-3


# -- regression loss ---------------------------------------------------------

def test_scale_loss_zero_when_exact():
    pred = np.array([[0.3, -0.2]])
    loss, grad = N.scale_regression_loss(pred, pred.copy(),
                                         np.ones_like(pred, bool))
    assert loss == 0.0 and np.all(grad == 0)


def test_scale_loss_single_pixel():
    pred = np.array([[0.5]])
    target = np.array([[0.0]])
    loss, _ = N.scale_regression_loss(pred, target, np.array([[True]]))
    assert loss == pytest.approx(0.25)


def test_scale_loss_empty_mask():
    pred = np.array([[0.5, 0.1]])
    loss, grad = N.scale_regression_loss(pred, np.zeros_like(pred),
                                         np.zeros_like(pred, bool))
    assert loss == 0.0 and np.all(grad == 0)


def test_scale_loss_matches_loop_oracle():
    rng = np.random.default_rng(2)
    pred = rng.standard_normal((7, 5))
    target = rng.standard_normal((7, 5))
    valid = rng.random((7, 5)) < 0.5
    loss, _ = N.scale_regression_loss(pred, target, valid)
    acc, n = 0.0, 0
    for y in range(7):
        for x in range(5):
            if valid[y, x]:
                acc += (pred[y, x] - target[y, x]) ** 2
                n += 1
    assert loss == pytest.approx(acc / n, rel=1e-12)


# -- fusion ------------------------------------------------------------------

def test_fusion_weight_counts():
    net = N.init_params(T.desk_backbone(), seed=0)
    counts = [net.fusion_weights(k).value.size for k in range(5)]
    assert counts == [4, 4, 3, 2, 1]
    for k in range(5):
        hk = net.fusion_weights(k).value
        assert np.allclose(hk, 1.0 / hk.size)
        assert hk.sum() == pytest.approx(1.0, abs=1e-6)


def test_fusion_of_equal_probabilities_is_identity():
    # equal per-stage distributions with uniform weights reproduce them
    net = N.init_params(toy_spec(), seed=0)
    rng = np.random.default_rng(3)
    img = (rng.random((16, 16)) - 0.5).astype(np.float32)
    acts = N.forward(net, img)
    # zero-initialized heads emit uniform per-stage distributions; the
    # fused score for class k is then the shared probability at class k
    for k in range(0, 3):
        stages = list(N.fusion_stage_range(k, 2))
        probs = [acts.stage_probs[i - 1][k] for i in stages]
        expect = sum(p / len(probs) for p in probs)
        assert np.allclose(acts.fused_scores[k], expect, atol=1e-12)


def test_forward_simplex_properties():
    net = N.init_params(toy_spec((3, 5)), seed=1)
    perturb(net)
    rng = np.random.default_rng(4)
    img = (rng.random((20, 24)) - 0.5).astype(np.float32)
    acts = N.forward(net, img)
    for p in acts.stage_probs:
        assert np.abs(p.sum(axis=0) - 1.0).max() <= 1e-6
    assert np.abs(acts.fused_probs.sum(axis=0) - 1.0).max() <= 1e-6


def test_forward_pads_odd_sizes():
    net = N.init_params(toy_spec(), seed=0)
    img = np.zeros((17, 19), np.float32)
    acts = N.forward(net, img)
    assert acts.logits[0].shape == (2, 17, 19)
    assert acts.fused_probs.shape == (3, 17, 19)


def test_forward_rejects_wrong_channels():
    net = N.init_params(toy_spec(), seed=0)
    with pytest.raises(T.ShapeError):
        N.forward(net, np.zeros((3, 16, 16), np.float32))


# -- full objective ----------------------------------------------------------

def test_total_objective_lambda_zero_has_zero_reg():
    net = N.init_params(toy_spec(), seed=2)
    perturb(net)
    rng = np.random.default_rng(5)
    img = (rng.random((16, 16)) - 0.5).astype(np.float32)
    rf = net.spec.receptive_fields()
    z, scale, targets = random_targets(rng, (16, 16), rf)
    bd, _ = N.total_objective(net, img, targets, z, 0.0)
    assert bd.reg == [0.0, 0.0]
    assert bd.total == pytest.approx(sum(bd.cls) + bd.fusion)


def test_total_objective_background_only_has_zero_reg():
    net = N.init_params(toy_spec(), seed=2)
    perturb(net)
    img = np.zeros((16, 16), np.float32)
    rf = net.spec.receptive_fields()
    z = np.zeros((16, 16), np.int32)
    scale = np.zeros((16, 16))
    targets = [gt.stage_targets(z, scale, i, rf, 1.2) for i in (1, 2)]
    bd, _ = N.total_objective(net, img, targets, z, 1.0)
    assert bd.reg == [0.0, 0.0]


def test_total_objective_gradients_fd_toy():
    net = N.init_params(toy_spec((3, 4)), seed=3)
    perturb(net)
    rng = np.random.default_rng(6)
    img = (rng.random((16, 16)) - 0.5).astype(np.float32)
    rf = net.spec.receptive_fields()
    z, scale, targets = random_targets(rng, (16, 16), rf)

    def objective():
        for p in net.parameters():
            p.zero_grad()
        bd, _ = N.total_objective(net, img, targets, z, 1.0)
        return bd.total

    objective()
    grads = {p.id: p.grad.copy() for p in net.parameters()}
    step = 1e-3
    worst = 0.0
    for p in net.parameters():
        flat = p.value.reshape(-1)
        for ix in rng.choice(flat.size, size=min(3, flat.size),
                             replace=False):
            old = flat[ix]
            flat[ix] = old + step
            lp = objective()
            flat[ix] = old - step
            lm = objective()
            flat[ix] = old
            num = (lp - lm) / (2 * step)
            rel = abs(grads[p.id].reshape(-1)[ix] - num) / max(1.0, abs(num))
            worst = max(worst, rel)
    assert worst <= 1e-3


def test_fsds_model_has_no_regressors():
    net = N.init_params(toy_spec(), seed=0, model="fsds")
    assert not any(pid.startswith("scale") for pid in net.params)
    acts = N.forward(net, np.zeros((16, 16), np.float32))
    assert acts.scale_preds is None


def test_init_determinism_and_head_zeros():
    a = N.init_params(T.desk_backbone(), seed=5)
    b = N.init_params(T.desk_backbone(), seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.id == pb.id
        assert np.array_equal(pa.value, pb.value)
    for i in range(1, 5):
        assert np.all(a.p(f"loc{i}.weight").value == 0)
        assert np.all(a.p(f"scale{i}.weight").value == 0)
