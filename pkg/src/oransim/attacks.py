"""White-box evasion attacks: targeted/untargeted FGSM and N-step PGD.

Targeted attacks descend the loss of the target label (move toward it);
untargeted attacks ascend the loss of the true label. ``paper_literal_sign``
flips the targeted step to ``+eps * sign(grad)``, i.e. the formula as it is
usually printed for the untargeted case, for side-by-side comparisons.

By default the attacker differentiates the cross-entropy of the model's
deployed probability output with the probability clamped at
:data:`oransim.nn.PROB_FLOOR`: wherever the clamp is active (the model is
saturated) the loss gradient is exactly zero. Set ``prob_floor=None`` for the
exact logit-space loss.

PGD stops early once no example moves (every later step would be the same
no-op). With ``early_stop`` it additionally freezes each example as soon as
the model already gives the attacker's desired answer, which is how a
minimal-effort attacker inside a latency budget behaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import PROB_FLOOR, Model, grad_input_batch


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    step_size: Optional[float] = None  # PGD alpha; defaults to epsilon / 4
    n_steps: int = 5
    targeted: bool = True
    target_label: int = 0
    clip_domain: tuple[float, float] = (0.0, 1.0)
    paper_literal_sign: bool = False
    prob_floor: Optional[float] = PROB_FLOOR
    early_stop: bool = False  # PGD: freeze an example once the goal is reached

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        lo, hi = self.clip_domain
        if not lo < hi:
            raise ValueError("clip_domain must satisfy lo < hi")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4


@dataclass
class AdversarialExample:
    x_adv: np.ndarray
    origin: np.ndarray
    budget_used: float


def _labels(cfg: AttackConfig, n: int, y_true) -> np.ndarray:
    if cfg.targeted:
        return np.full(n, cfg.target_label)
    if y_true is None:
        raise ValueError("untargeted attacks need the true labels")
    return np.broadcast_to(np.asarray(y_true), (n,)).copy()


def _direction(cfg: AttackConfig) -> float:
    # targeted: move down the target-label loss; untargeted: up the true-label loss
    if cfg.targeted and not cfg.paper_literal_sign:
        return -1.0
    return 1.0


def _signed_step(model: Model, X: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                 freeze_done: bool = False) -> np.ndarray:
    g, logits = grad_input_batch(model, X, labels, 1.0, prob_floor=cfg.prob_floor, return_logits=True)
    step = _direction(cfg) * np.sign(g)
    if freeze_done:
        pred = np.argmax(logits, axis=1)
        done = pred == labels if cfg.targeted else pred != labels
        step[done] = 0.0
    return step


def fgsm_batch(model: Model, X, cfg: AttackConfig, y_true=None) -> np.ndarray:
    """One-step sign attack on a batch; returns the adversarial batch."""
    X = model._batch(X)
    lo, hi = cfg.clip_domain
    if cfg.epsilon == 0:
        return X.copy()
    labels = _labels(cfg, len(X), y_true)
    return np.clip(X + cfg.epsilon * _signed_step(model, X, labels, cfg), lo, hi)


def pgd_batch(model: Model, X, cfg: AttackConfig, y_true=None) -> np.ndarray:
    """N-step projected sign-gradient attack starting from the clean input."""
    X = model._batch(X)
    lo, hi = cfg.clip_domain
    if cfg.epsilon == 0:
        return X.copy()
    labels = _labels(cfg, len(X), y_true)
    eps = cfg.epsilon
    cur = X.copy()
    for _ in range(cfg.n_steps):
        step = _signed_step(model, cur, labels, cfg, freeze_done=cfg.early_stop)
        if not step.any():
            break  # nothing moves, so every later step is the same no-op
        cur = cur + cfg.alpha * step
        cur = np.clip(cur, X - eps, X + eps)
        cur = np.clip(cur, lo, hi)
    return cur


def _single(fn, model: Model, x, cfg: AttackConfig, y_true) -> AdversarialExample:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model input {model.input_shape}")
    adv = fn(model, x[None], cfg, None if y_true is None else [y_true])[0]
    return AdversarialExample(adv, x, float(np.max(np.abs(adv - x))) if x.size else 0.0)


def fgsm(model: Model, x, cfg: AttackConfig, y_true: Optional[int] = None) -> AdversarialExample:
    """Fast gradient sign method (``cfg.n_steps`` is ignored)."""
    return _single(fgsm_batch, model, x, cfg, y_true)


def pgd(model: Model, x, cfg: AttackConfig, y_true: Optional[int] = None) -> AdversarialExample:
    """Projected gradient descent with step ``cfg.alpha`` for ``cfg.n_steps`` steps."""
    return _single(pgd_batch, model, x, cfg, y_true)


ATTACKS = {"fgsm": fgsm_batch, "pgd": pgd_batch}


def attack_batch(kind: str, model: Model, X, cfg: AttackConfig, y_true=None,
                 batch_size: int = 64) -> np.ndarray:
    """Run ``kind`` ('fgsm' or 'pgd') over ``X`` in chunks."""
    try:
        fn = ATTACKS[kind]
    except KeyError:
        raise ValueError(f"unknown attack {kind!r}") from None
    X = np.asarray(X, dtype=np.float64)
    y = None if y_true is None else np.asarray(y_true)
    parts = [fn(model, X[s:s + batch_size], cfg, None if y is None else y[s:s + batch_size])
             for s in range(0, len(X), batch_size)]
    return np.concatenate(parts) if parts else X.copy()
