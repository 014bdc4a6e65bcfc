"""Defenses: defensive distillation and the adversarial-training baseline.

Distillation trains a teacher with cross-entropy at a high softmax temperature,
then trains a student of the *same* architecture on

    alpha * CE(student logits, labels, T_s) + (1 - alpha) * KL(teacher_T || student_T)

where both soft distributions in the KL term use ``kl_T`` (the teacher
temperature unless overridden). Teacher probabilities are computed once and
treated as constants. The student is deployed at T = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attacks import AttackConfig, attack_batch
from .nn import PROB_FLOOR, Model, TrainConfig, fit, log_softmax_t, logits_batched, softmax_t, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistillConfig:
    teacher_T: float = 20.0
    student_T: float = 1.0
    kl_T: Optional[float] = None
    alpha: float = 0.1
    teacher_cfg: TrainConfig = field(default_factory=TrainConfig)
    student_cfg: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for T in (self.teacher_T, self.student_T, self.kl_temperature):
            if not T > 0:
                raise ValueError("temperatures must be > 0")

    @property
    def kl_temperature(self) -> float:
        return self.teacher_T if self.kl_T is None else self.kl_T


@dataclass(frozen=True)
class AdvTrainConfig:
    epsilon: float = 0.02
    attack: str = "fgsm"
    augmentation_ratio: float = 0.5
    warmup_cfg: TrainConfig = field(default_factory=TrainConfig)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    clip_domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 < self.augmentation_ratio <= 1.0:
            raise ValueError("augmentation_ratio must lie in (0, 1]")
        if self.attack not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack {self.attack!r}")


def _check_dataset(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("dataset must be non-empty with one label per example")
    return X, y


def distillation_loss(logits: np.ndarray, labels: np.ndarray, soft_targets: np.ndarray,
                      alpha: float, student_T: float, kl_T: float) -> tuple[float, np.ndarray]:
    """Mean combined loss over a batch and its gradient w.r.t. the student logits."""
    n = len(logits)
    rows = np.arange(n)
    logp_s = log_softmax_t(logits, student_T)
    ce = -logp_s[rows, labels]
    d_ce = np.exp(logp_s)
    d_ce[rows, labels] -= 1.0
    d_ce /= student_T

    q = np.maximum(softmax_t(logits, kl_T), PROB_FLOOR)
    p = np.maximum(soft_targets, PROB_FLOOR)
    kl = np.sum(p * (np.log(p) - np.log(q)), axis=1)
    d_kl = (softmax_t(logits, kl_T) - soft_targets) / kl_T

    loss = float(np.mean(alpha * ce + (1 - alpha) * kl))
    grad = (alpha * d_ce + (1 - alpha) * d_kl) / n
    return loss, grad


def train_teacher(init: Model, X, y, cfg: DistillConfig, **kwargs) -> Model:
    """Cross-entropy training at ``cfg.teacher_T``."""
    X, y = _check_dataset(X, y)
    tcfg = cfg.teacher_cfg
    if tcfg.temperature != cfg.teacher_T:
        tcfg = TrainConfig(tcfg.learning_rate, tcfg.epochs, tcfg.batch_size, tcfg.seed, cfg.teacher_T)
    return train(init, X, y, tcfg, **kwargs)


def distill_student(teacher: Model, init: Model, X, y, cfg: DistillConfig, **kwargs) -> Model:
    """Train ``init`` (same architecture as ``teacher``) on the combined distillation loss."""
    if not teacher.same_architecture(init):
        raise ValueError("student and teacher architectures must be identical")
    X, y = _check_dataset(X, y)
    kl_T = cfg.kl_temperature
    soft = softmax_t(logits_batched(teacher, X), kl_T)
    return fit(init, X, lambda logits, idx: distillation_loss(logits, y[idx], soft[idx], cfg.alpha,
                                                              cfg.student_T, kl_T),
               cfg.student_cfg, **kwargs)


def distill(init_teacher: Model, init_student: Model, X, y, cfg: DistillConfig) -> tuple[Model, Model]:
    """Full pipeline: teacher at high temperature, then the student. Returns (teacher, student)."""
    teacher = train_teacher(init_teacher, X, y, cfg)
    return teacher, distill_student(teacher, init_student, X, y, cfg)


def adversarial_train(init: Model, X, y, acfg: AdvTrainConfig) -> Model:
    """Warm up on clean data, then continue training on clean + adversarial examples.

    A seeded subset (``augmentation_ratio`` of the training set) is attacked
    (untargeted, true labels) against the warm-up model and appended with its
    original labels.
    """
    X, y = _check_dataset(X, y)
    warm = train(init, X, y, acfg.warmup_cfg)
    rng = np.random.default_rng(acfg.train_cfg.seed)
    n_adv = max(1, int(round(acfg.augmentation_ratio * len(X))))
    pick = np.sort(rng.choice(len(X), size=n_adv, replace=False))
    atk = AttackConfig(epsilon=acfg.epsilon, targeted=False, clip_domain=acfg.clip_domain)
    X_adv = attack_batch(acfg.attack, warm, X[pick], atk, y_true=y[pick])
    log.info("adversarial training: %d clean + %d adversarial examples", len(X), n_adv)
    return train(warm, np.concatenate([X, X_adv]), np.concatenate([y, y[pick]]), acfg.train_cfg)
