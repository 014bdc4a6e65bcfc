"""The legitimate interference-classification xApp and the malicious xApp.

Both talk to the RIC only through SDL handles. The legitimate xApp reads the
newest entry under its data key and turns the predicted class into a control
decision; the malicious xApp rewrites that same entry with an adversarial copy
targeted at SOI before the legitimate xApp gets to it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .attacks import AttackConfig, fgsm, pgd
from .errors import NotFound
from .models import SOI, predict
from .nn import Model
from .ric import PATH_KEYS, ControlDecision, decide
from .sdl import SdlHandle, pack_array, sdl_get_latest, sdl_put, unpack_array

DEFENSES = ("none", "adversarial_training", "distillation")


@dataclass(frozen=True)
class ScenarioPhase:
    attack_enabled: bool = False
    defense: str = "none"

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ValueError(f"defense must be one of {DEFENSES}")


@dataclass
class InterClassXapp:
    """Reads one data key and emits one decision per new version."""

    variant: str
    model: Model
    sdl: SdlHandle
    key: Optional[str] = None
    last_version: int = 0
    inference_ms: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in PATH_KEYS:
            raise ValueError(f"variant must be one of {tuple(PATH_KEYS)}")
        if self.key is None:
            self.key = PATH_KEYS[self.variant]

    def step(self) -> Optional[ControlDecision]:
        """Classify the newest entry; ``None`` when nothing new has arrived."""
        start = time.perf_counter()
        try:
            entry = sdl_get_latest(self.sdl, self.key)
        except NotFound:
            return None
        if entry.version <= self.last_version:
            return None
        self.last_version = entry.version
        cls, _ = predict(self.model, unpack_array(entry.value))
        self.inference_ms.append((time.perf_counter() - start) * 1000.0)
        return decide(cls)


def interclass_step(xapp: InterClassXapp) -> Optional[ControlDecision]:
    return xapp.step()


ATTACK_FNS = {"fgsm": fgsm, "pgd": pgd}


@dataclass
class MaliciousXapp:
    """White-box attacker holding its own copy of the victim model.

    ``perturbed`` records (original version, written version) pairs. It is
    bookkeeping for the scenario trace; the legitimate xApp never sees it.
    """

    attack: str
    config: AttackConfig
    victim_model: Model
    sdl: SdlHandle
    key: str
    perturbed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.attack not in ATTACK_FNS:
            raise ValueError(f"unknown attack {self.attack!r}")
        if self.config.targeted and self.config.target_label != SOI:
            raise ValueError("the malicious xApp targets SOI")
        if not self.sdl.can_write:
            raise ValueError("the malicious xApp needs a writable SDL handle")
        self.victim_model = self.victim_model.copy()

    def craft(self) -> Optional[tuple[int, bytes]]:
        """Read the newest unperturbed entry and return (its version, perturbed bytes)."""
        entry = sdl_get_latest(self.sdl, self.key)
        if entry.version in self.perturbed or entry.version in self.perturbed.values():
            return None
        x = unpack_array(entry.value)
        adv = ATTACK_FNS[self.attack](self.victim_model, x, self.config).x_adv
        return entry.version, pack_array(adv)

    def commit(self, read_version: int, value: bytes) -> Optional[int]:
        """Write ``value`` back only if no newer entry has landed since it was read."""
        v = sdl_put(self.sdl, self.key, value, expect_version=read_version)
        if v is not None:
            self.perturbed[read_version] = v
        return v

    def step(self) -> Optional[int]:
        got = self.craft()
        if got is None:
            return None
        return self.commit(*got)

    @property
    def gradient_evals(self) -> int:
        return 1 if self.attack == "fgsm" else self.config.n_steps


def malicious_step(xapp: MaliciousXapp) -> Optional[int]:
    """Perturb the newest entry; returns the new version or None if already done."""
    return xapp.step()
