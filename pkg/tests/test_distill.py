import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oransim import nn
from oransim.distill import (AdvTrainConfig, DistillConfig, adversarial_train, distill, distill_student,
                             distillation_loss, train_teacher)

from conftest import TINY_DNN

PROB = arrays(np.float64, 3, elements=st.floats(1e-3, 1.0)).map(lambda v: v / v.sum())


def _ce(logits, label, T):
    z = logits / T
    return -(z[label] - np.log(np.sum(np.exp(z))))


def _kl(p, q):
    return float(np.sum(p * np.log(p / q)))


@settings(max_examples=1000)
@given(arrays(np.float64, 3, elements=st.floats(-10, 10)), PROB, st.integers(0, 2),
       st.sampled_from([0.0, 0.1, 0.5, 1.0]), st.floats(0.5, 30))
def test_combined_loss_decomposes(z, soft, label, alpha, kl_T):
    loss, _ = distillation_loss(z[None], np.array([label]), soft[None], alpha, 1.0, kl_T)
    q = np.exp(z / kl_T - np.max(z / kl_T))
    q /= q.sum()
    expected = alpha * _ce(z, label, 1.0) + (1 - alpha) * _kl(soft, np.maximum(q, 1e-12))
    assert loss == pytest.approx(expected, abs=1e-12, rel=1e-12)


@settings(max_examples=1000)
@given(PROB, PROB)
def test_kl_non_negative_and_identity(p, q):
    assert nn.kl_loss(p, q) >= -1e-15
    assert nn.kl_loss(p, p) == 0.0


@settings(max_examples=200)
@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)), st.floats(0, 1), st.floats(1, 20))
def test_combined_gradient_matches_finite_difference(z, alpha, kl_T):
    soft = nn.softmax_t(np.array([[1.0, 0.0, -1.0], [0.2, 0.3, 0.1]]), 2.0)
    y = np.array([0, 2])
    _, g = distillation_loss(z, y, soft, alpha, 1.0, kl_T)
    h = 1e-6
    for i in range(2):
        for j in range(3):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += h
            zm[i, j] -= h
            num = (distillation_loss(zp, y, soft, alpha, 1.0, kl_T)[0]
                   - distillation_loss(zm, y, soft, alpha, 1.0, kl_T)[0]) / (2 * h)
            assert g[i, j] == pytest.approx(num, abs=1e-6)


def test_kl_temperature_defaults_to_teacher():
    assert DistillConfig(teacher_T=7).kl_temperature == 7
    assert DistillConfig(teacher_T=7, kl_T=3).kl_temperature == 3


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(teacher_T=0), dict(kl_T=-1.0)])
def test_distill_config_validation(kw):
    with pytest.raises(ValueError):
        DistillConfig(**kw)


@pytest.mark.parametrize("kw", [dict(epsilon=-1), dict(augmentation_ratio=0), dict(attack="cw")])
def test_advtrain_config_validation(kw):
    with pytest.raises(ValueError):
        AdvTrainConfig(**kw)


def _toy(rng, n=200):
    X = rng.uniform(0, 1, (n, 12))
    return X, (X[:, 0] > 0.5).astype(int)


def test_architecture_mismatch_rejected(rng):
    X, y = _toy(rng, 20)
    teacher = nn.init_model(TINY_DNN, (12,), 0)
    other = nn.init_model((nn.Dense(3, "relu"), nn.Dense(2)), (12,), 0)
    with pytest.raises(ValueError):
        distill_student(teacher, other, X, y, DistillConfig())


def test_distill_pipeline_learns_and_leaves_teacher_alone(rng):
    X, y = _toy(rng)
    cfg = DistillConfig(teacher_T=5, teacher_cfg=nn.TrainConfig(0.5, 30, seed=1),
                        student_cfg=nn.TrainConfig(0.5, 30, seed=2))
    init = nn.init_model(TINY_DNN, (12,), 0)
    teacher = train_teacher(init, X, y, cfg)
    frozen = teacher.param_bytes()
    student = distill_student(teacher, nn.init_model(TINY_DNN, (12,), 1), X, y, cfg)
    assert teacher.param_bytes() == frozen
    acc = np.mean(np.argmax(student.forward(X), 1) == y)
    assert acc > 0.8
    t2, s2 = distill(init, nn.init_model(TINY_DNN, (12,), 1), X, y, cfg)
    assert t2.param_bytes() == frozen and s2.param_bytes() == student.param_bytes()


def test_adversarial_training_runs_deterministically(rng):
    X, y = _toy(rng, 100)
    acfg = AdvTrainConfig(0.05, "fgsm", 0.5, nn.TrainConfig(0.3, 5, seed=0), nn.TrainConfig(0.3, 5, seed=1))
    init = nn.init_model(TINY_DNN, (12,), 0)
    a = adversarial_train(init, X, y, acfg)
    assert a.param_bytes() == adversarial_train(init, X, y, acfg).param_bytes()


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_teacher(nn.init_model(TINY_DNN, (12,), 0), np.zeros((0, 12)), np.zeros(0, int), DistillConfig())
