"""Experiment runner: data, training, sweeps, closed-loop runs and reports.

Everything is driven by an :class:`ExperimentConfig`, which can be loaded from
a ``key=value`` file with flat dotted keys (``train.spec.lr=0.01``). Output
files are written under ``cfg.out``::

    data/spectrogram/, data/kpm/        datasets (see oransim.datagen)
    models/<variant>_<role>.orml        undefended, teacher, distilled, advtrained
    sweep/<variant>_<role>_<attack>.csv epsilon,accuracy
    loop/<variant>/...                  traces, CDFs, summary, timing
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from . import datagen, models
from .attacks import AttackConfig, attack_batch
from .distill import AdvTrainConfig, DistillConfig, adversarial_train, distill_student, train_teacher
from .errors import ConfigError, Unsupported
from .nn import Model, TrainConfig, train
from .ric import STAGES
from .scenario import MODES, LoopConfig, ScenarioTrace, run_scenario
from .simnet import ScenarioSchedule

log = logging.getLogger(__name__)

VARIANTS = ("spec", "kpm")
ROLES = ("undefended", "teacher", "distilled", "advtrained")
CONDITIONS = ("no_attack", "attack", "defended", "advtrained")
DATA_KIND = {"spec": "spectrogram", "kpm": "kpm"}
EPS_GRID = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1)
NEAR_RT_BOUND_MS = 1000.0


@dataclass
class ExperimentConfig:
    """All experiment knobs. Attribute ``a_b_c`` is config key ``a.b.c``."""

    seed: int = 0
    mode: str = "det"
    out: str = "out"
    variants: tuple = VARIANTS

    data_dir: str = ""  # defaults to <out>/data
    data_scale: str = "desk"
    data_spec_counts: tuple = ()
    data_kpm_counts: tuple = ()
    data_kpm_t: int = 15
    data_test_fraction: float = 0.2

    train_batch_size: int = 32
    train_spec_lr: float = 0.01
    train_spec_epochs: int = 2
    train_kpm_lr: float = 0.05
    train_kpm_epochs: int = 20

    distill_teacher_t: float = 20.0
    distill_alpha: float = 0.1
    distill_kl_t: float = 0.0  # 0 means "same as the teacher temperature"
    distill_spec_teacher_lr: float = 0.03
    distill_spec_teacher_epochs: int = 2
    distill_spec_student_lr: float = 0.03
    distill_spec_student_epochs: int = 2
    distill_kpm_teacher_lr: float = 1.0
    distill_kpm_teacher_epochs: int = 20
    distill_kpm_student_lr: float = 1.0
    distill_kpm_student_epochs: int = 20

    advtrain_epsilon: float = 0.02
    advtrain_attack: str = "fgsm"
    advtrain_ratio: float = 0.5

    attack_kinds: tuple = ("fgsm", "pgd")
    attack_eps: tuple = EPS_GRID
    attack_steps: int = 5
    attack_step_size: float = 0.0  # 0 means epsilon / 4
    attack_targeted: bool = True
    attack_max_samples: int = 0  # cap on attacked test samples per sweep point; 0 means all

    scenario_total_s: float = 180.0
    scenario_clean_s: float = 90.0
    scenario_jam_s: float = 90.0
    scenario_jam_gain_db: float = 40.0
    scenario_kpm_interval_s: float = 1.0
    scenario_iq_frame_interval_s: float = 1.0
    scenario_tick_ms: int = 100

    loop_variant: str = "spec"
    loop_seeds: int = 20
    loop_conditions: tuple = ("no_attack", "attack", "defended")
    loop_attack: str = "pgd"
    loop_epsilon: float = 0.1
    loop_racy: bool = False
    loop_early_stop: bool = True
    loop_time_scale: float = 0.1

    e2_listen: str = "127.0.0.1:0"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.data_scale not in ("desk", "full"):
            raise ConfigError("data.scale must be desk or full")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if self.loop_variant not in VARIANTS:
            raise ConfigError(f"unknown loop.variant {self.loop_variant!r}")
        for c in self.loop_conditions:
            if c not in CONDITIONS:
                raise ConfigError(f"unknown loop condition {c!r}")
        for k in self.attack_kinds + (self.loop_attack, self.advtrain_attack):
            if k not in ("fgsm", "pgd"):
                raise ConfigError(f"unknown attack {k!r}")
        if not self.attack_eps or any(e < 0 for e in self.attack_eps):
            raise ConfigError("attack.eps must be a non-empty list of non-negative numbers")
        for counts in (self.data_spec_counts, self.data_kpm_counts):
            if counts and (len(counts) != 2 or min(counts) < 1):
                raise ConfigError("dataset counts are two positive integers")
        if self.loop_seeds < 1:
            raise ConfigError("loop.seeds must be >= 1")
        try:
            self.schedule()
            self.distill_config("kpm")
            self.advtrain_config("kpm")
            self.attack_config(0.1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- derived objects -------------------------------------------------------

    @property
    def data_root(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out) / "data"

    def counts(self, variant: str) -> tuple[int, int]:
        given = self.data_spec_counts if variant == "spec" else self.data_kpm_counts
        if given:
            return tuple(int(c) for c in given)
        table = datagen.DESK_COUNTS if self.data_scale == "desk" else datagen.FULL_COUNTS
        return table[DATA_KIND[variant]]

    def train_config(self, variant: str) -> TrainConfig:
        lr, ep = ((self.train_spec_lr, self.train_spec_epochs) if variant == "spec"
                  else (self.train_kpm_lr, self.train_kpm_epochs))
        return TrainConfig(lr, ep, self.train_batch_size, self.seed)

    def distill_config(self, variant: str) -> DistillConfig:
        p = f"distill_{variant}_"
        t_cfg = TrainConfig(getattr(self, p + "teacher_lr"), getattr(self, p + "teacher_epochs"),
                            self.train_batch_size, self.seed + 1)
        s_cfg = TrainConfig(getattr(self, p + "student_lr"), getattr(self, p + "student_epochs"),
                            self.train_batch_size, self.seed + 2)
        return DistillConfig(self.distill_teacher_t, 1.0, self.distill_kl_t or None, self.distill_alpha,
                             t_cfg, s_cfg)

    def advtrain_config(self, variant: str) -> AdvTrainConfig:
        base = self.train_config(variant)
        return AdvTrainConfig(self.advtrain_epsilon, self.advtrain_attack, self.advtrain_ratio,
                              base, dataclasses.replace(base, seed=self.seed + 3))

    def attack_config(self, epsilon: float) -> AttackConfig:
        return AttackConfig(epsilon=epsilon, step_size=self.attack_step_size or None,
                            n_steps=self.attack_steps, targeted=self.attack_targeted)

    def schedule(self) -> ScenarioSchedule:
        return ScenarioSchedule(self.scenario_total_s, self.scenario_clean_s, self.scenario_jam_s,
                                self.scenario_jam_gain_db, self.scenario_kpm_interval_s,
                                self.scenario_iq_frame_interval_s, self.scenario_tick_ms)

    def listen_address(self) -> tuple[str, int]:
        host, _, port = self.e2_listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"bad e2.listen address {self.e2_listen!r}") from None


# -- config files ------------------------------------------------------------------

def _field_types() -> dict:
    return {f.name: type(f.default) if f.default is not dataclasses.MISSING else
            type(f.default_factory()) for f in dataclasses.fields(ExperimentConfig)}


def _convert(name: str, raw: str, kind: type, current):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = current[0] if current else ""
            if name.endswith("counts"):
                return tuple(int(s) for s in items)
            if isinstance(sample, float) or name == "attack_eps":
                return tuple(float(s) for s in items)
            return tuple(items)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name.replace('_', '.')}") from None


def config_from_pairs(pairs: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply ``{dotted.key: raw string}`` overrides to ``base`` (or defaults)."""
    types = _field_types()
    values = dataclasses.asdict(base) if base is not None else {}
    for key, raw in pairs.items():
        name = key.strip().replace(".", "_").replace("-", "_").lower()
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        current = values.get(name, getattr(ExperimentConfig, name, None))
        values[name] = _convert(name, str(raw), types[name], current)
    return ExperimentConfig(**values)


def parse_config_text(text: str) -> dict:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_pairs(parse_config_text(text))


def config_text(cfg: ExperimentConfig) -> str:
    """Serialize back to ``key=value`` lines (round-trips through load_config)."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        lines.append(f"{f.name.replace('_', '.')}={v}")
    return "\n".join(lines) + "\n"


# -- data and models -----------------------------------------------------------------

def ensure_dataset(cfg: ExperimentConfig, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Load the variant's dataset, generating it first if absent or stale."""
    path = cfg.data_root / DATA_KIND[variant]
    want = cfg.counts(variant)
    if (path / "manifest.txt").exists():
        X, y, man = datagen.load_dataset(path)
        if (man.n_class0, man.n_class1, man.seed) == (*want, cfg.seed):
            return X, y
    datagen.build_dataset(DATA_KIND[variant], want, cfg.seed, path, kpm_t=cfg.data_kpm_t)
    X, y, _ = datagen.load_dataset(path)
    return X, y


def splits(cfg: ExperimentConfig, variant: str):
    X, y = ensure_dataset(cfg, variant)
    return datagen.split_dataset(X, y, cfg.data_test_fraction, cfg.seed)


def fresh_model(cfg: ExperimentConfig, variant: str, offset: int = 0) -> Model:
    if variant == "spec":
        return models.build_spec_model(cfg.seed + offset)
    return models.build_kpm_model(t=cfg.data_kpm_t, seed=cfg.seed + offset)


def model_path(cfg: ExperimentConfig, variant: str, role: str) -> Path:
    return Path(cfg.out) / "models" / f"{variant}_{role}.orml"


def load_model(cfg: ExperimentConfig, variant: str, role: str) -> Model:
    path = model_path(cfg, variant, role)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the matching training command first")
    return models.load(path)


def _save(cfg, variant, role, model) -> Path:
    path = model_path(cfg, variant, role)
    path.parent.mkdir(parents=True, exist_ok=True)
    models.save(model, path)
    return path


def train_undefended(cfg: ExperimentConfig, variant: str) -> Model:
    Xtr, ytr, Xte, yte = splits(cfg, variant)
    m = train(fresh_model(cfg, variant), Xtr, ytr, cfg.train_config(variant))
    log.info("%s undefended: held-out accuracy %.4f", variant, models.accuracy(m, Xte, yte))
    _save(cfg, variant, "undefended", m)
    return m


def train_distilled(cfg: ExperimentConfig, variant: str) -> tuple[Model, Model]:
    Xtr, ytr, Xte, yte = splits(cfg, variant)
    dcfg = cfg.distill_config(variant)
    teacher = train_teacher(fresh_model(cfg, variant, 1), Xtr, ytr, dcfg)
    student = distill_student(teacher, fresh_model(cfg, variant, 2), Xtr, ytr, dcfg)
    log.info("%s distilled: teacher %.4f, student %.4f held-out accuracy", variant,
             models.accuracy(teacher, Xte, yte), models.accuracy(student, Xte, yte))
    _save(cfg, variant, "teacher", teacher)
    _save(cfg, variant, "distilled", student)
    return teacher, student


def train_advtrained(cfg: ExperimentConfig, variant: str) -> Model:
    Xtr, ytr, Xte, yte = splits(cfg, variant)
    m = adversarial_train(fresh_model(cfg, variant), Xtr, ytr, cfg.advtrain_config(variant))
    log.info("%s adversarially trained: held-out accuracy %.4f", variant, models.accuracy(m, Xte, yte))
    _save(cfg, variant, "advtrained", m)
    return m


# -- sweeps ------------------------------------------------------------------------

def accuracy_sweep(model: Model, X, y, kind: str, eps_list: Sequence[float],
                   base: AttackConfig = AttackConfig(), max_samples: int = 0,
                   seed: int = 0) -> list[tuple[float, float]]:
    """Accuracy on attacked copies of a labeled test set, one row per epsilon.

    A targeted attack cannot lower accuracy on samples that already carry the
    target label, so in targeted mode only the other samples are attacked and
    scored; untargeted attacks use the whole set. The epsilon = 0 row is the
    clean accuracy of that same evaluation set. ``max_samples`` > 0 evaluates a
    seeded subset of that size instead.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("test set must be non-empty with one label per sample")
    if base.targeted:
        keep = y != base.target_label
        X, y = X[keep], y[keep]
        if len(X) == 0:
            raise ValueError("no samples outside the target class")
    if 0 < max_samples < len(X):
        pick = np.sort(np.random.default_rng(seed).choice(len(X), size=max_samples, replace=False))
        X, y = X[pick], y[pick]
    rows = []
    for eps in eps_list:
        cfg = dataclasses.replace(base, epsilon=float(eps))
        X_adv = attack_batch(kind, model, X, cfg, y_true=None if cfg.targeted else y)
        rows.append((float(eps), models.accuracy(model, X_adv, y)))
    return rows


def sweep_csv(rows) -> str:
    return "epsilon,accuracy\n" + "".join(f"{e!r},{a!r}\n" for e, a in rows)


def is_non_increasing(values: Sequence[float], tolerance: float = 0.02) -> bool:
    """True when no value exceeds the running minimum by more than ``tolerance``."""
    low = math.inf
    for v in values:
        if v > low + tolerance:
            return False
        low = min(low, v)
    return True


def run_sweeps(cfg: ExperimentConfig, roles: Sequence[str] = ("undefended", "distilled", "advtrained")) -> dict:
    out = {}
    for variant in cfg.variants:
        _, _, Xte, yte = splits(cfg, variant)
        for role in roles:
            path = model_path(cfg, variant, role)
            if not path.exists():
                continue
            m = models.load(path)
            for kind in cfg.attack_kinds:
                rows = accuracy_sweep(m, Xte, yte, kind, cfg.attack_eps, cfg.attack_config(0.0),
                                      cfg.attack_max_samples, cfg.seed)
                dest = Path(cfg.out) / "sweep" / f"{variant}_{role}_{kind}.csv"
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_text(sweep_csv(rows))
                out[(variant, role, kind)] = rows
    return out


# -- closed loop ---------------------------------------------------------------------

def ecdf(values: Sequence[float]) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    return [(float(x), (i + 1) / n) for i, x in enumerate(v)]


def cdf_csv(values: Sequence[float], name: str) -> str:
    return f"{name},cdf\n" + "".join(f"{x!r},{p!r}\n" for x, p in ecdf(values))


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(ks_2samp(a, b).statistic)


def first_order_dominates(right: Sequence[float], left: Sequence[float]) -> bool:
    """True when the ECDF of ``right`` is everywhere <= the ECDF of ``left``
    (``right`` lies to the right) and differs somewhere."""
    grid = np.union1d(right, left)
    fr = np.searchsorted(np.sort(right), grid, side="right") / len(right)
    fl = np.searchsorted(np.sort(left), grid, side="right") / len(left)
    return bool(np.all(fr <= fl + 1e-12) and np.any(fr < fl - 1e-12))


@dataclass
class TimingBreakdown:
    path: str
    n_items: int
    receive_data: float
    forward_to_processing: float
    process_and_store: float
    model_inference: float
    control_to_ran: float
    total: float
    receive_bytes: int

    @property
    def stage_sum(self) -> float:
        return sum(getattr(self, s) for s in STAGES)

    @property
    def within_near_rt(self) -> bool:
        return self.total < NEAR_RT_BOUND_MS

    def row(self) -> str:
        vals = [getattr(self, s) for s in STAGES] + [self.total]
        return f"{self.path}," + ",".join(f"{v:.3f}" for v in vals) + f",{self.receive_bytes},{self.n_items}"


TIMING_HEADER = "path," + ",".join(STAGES) + ",total,receive_bytes,n_items"


def timing_report(*traces: ScenarioTrace) -> dict:
    """Mean per-stage wall-clock durations (ms) for each data path in ``traces``."""
    by_path: dict = {}
    for tr in traces:
        if tr.mode != "live":
            raise Unsupported("timing needs a live-mode trace; virtual time is not wall time")
        by_path.setdefault(tr.variant, []).extend(r for r in tr.stages if r.complete())
    out = {}
    for path, recs in by_path.items():
        if not recs:
            raise ValueError(f"no complete pipeline records for the {path} path")
        d = [r.durations() for r in recs]
        mean = {k: float(np.mean([x[k] for x in d])) for k in d[0]}
        out[path] = TimingBreakdown(path, len(recs), *(mean[s] for s in STAGES), mean["total"],
                                    recs[0].nbytes)
    return out


@dataclass
class LoopReport:
    traces: dict = field(default_factory=dict)   # condition -> list of traces (one per seed)
    summary: dict = field(default_factory=dict)  # condition -> metrics
    timing: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def pooled(self, condition: str, metric: str, phase: Optional[str] = "jam") -> list:
        return [v for tr in self.traces[condition] for v in tr.column(metric, phase)]


def _condition_loop(cfg: ExperimentConfig, condition: str, variant: str, models_by_role: dict) -> LoopConfig:
    attack = None if condition == "no_attack" else cfg.loop_attack
    role = {"no_attack": "undefended", "attack": "undefended", "defended": "distilled",
            "advtrained": "advtrained"}[condition]
    atk = dataclasses.replace(cfg.attack_config(cfg.loop_epsilon), targeted=True,
                              early_stop=cfg.loop_early_stop)
    return LoopConfig(variant, models_by_role[role], attack, atk, racy=cfg.loop_racy, kpm_t=cfg.data_kpm_t,
                      listen=cfg.listen_address(), time_scale=cfg.loop_time_scale)


def run_closed_loop(cfg: ExperimentConfig, models_by_role: Optional[dict] = None,
                    write: bool = True) -> LoopReport:
    """Run every configured condition over ``cfg.loop_seeds`` seeds and write the reports."""
    variant = cfg.loop_variant
    if models_by_role is None:
        need = {"no_attack": "undefended", "attack": "undefended", "defended": "distilled",
                "advtrained": "advtrained"}
        models_by_role = {need[c]: load_model(cfg, variant, need[c]) for c in cfg.loop_conditions}
    schedule = cfg.schedule()
    rep = LoopReport()
    loops = {c: _condition_loop(cfg, c, variant, models_by_role) for c in cfg.loop_conditions}
    runs: dict = {c: [] for c in cfg.loop_conditions}
    for k in range(cfg.loop_seeds):
        frames: dict = {}  # conditions with the same seed see the same I/Q frames
        for cond, loop in loops.items():
            try:
                runs[cond].append(run_scenario(schedule, loop, cfg.seed + k, cfg.mode, frames))
            except (OSError, ValueError) as exc:
                raise RuntimeError(f"condition {cond}, seed {cfg.seed + k}: {exc}") from exc
    for cond in cfg.loop_conditions:
        rep.traces[cond] = runs[cond]
        rep.summary[cond] = _summarize(runs[cond])
    if cfg.mode == "live":
        rep.timing = timing_report(*(tr for runs in rep.traces.values() for tr in runs))
    if write:
        rep.files = _write_loop(cfg, rep)
    return rep


def _summarize(runs: list) -> dict:
    out = {}
    for window in ("jam", "all"):
        phase = None if window == "all" else window
        tput = [v for tr in runs for v in tr.column("throughput_mbps", phase)]
        bler = [v for tr in runs for v in tr.column("bler", phase)]
        out[f"{window}.throughput_mean"] = float(np.mean(tput))
        out[f"{window}.throughput_median"] = float(np.median(tput))
        out[f"{window}.bler_mean"] = float(np.mean(bler))
        out[f"{window}.bler_median"] = float(np.median(bler))
    decisions = [d for tr in runs for d in tr.decisions]
    out["decisions"] = len(decisions)
    out["decision_accuracy"] = (sum(d[2] == d[3] for d in decisions) / len(decisions)) if decisions else math.nan
    out["perturbed_reads"] = sum(d[5] for d in decisions)
    return out


def _write_loop(cfg: ExperimentConfig, rep: LoopReport) -> list:
    root = Path(cfg.out) / "loop" / cfg.loop_variant
    root.mkdir(parents=True, exist_ok=True)
    files = []

    def put(name, text):
        p = root / name
        p.write_text(text)
        files.append(p)

    for cond, runs in rep.traces.items():
        for k, tr in enumerate(runs):
            put(f"trace_{cond}_seed{cfg.seed + k}.csv", tr.to_csv())
            put(f"decisions_{cond}_seed{cfg.seed + k}.csv", tr.decisions_csv())
        for window in ("jam", "all"):
            phase = None if window == "all" else window
            for metric in ("throughput_mbps", "bler"):
                put(f"cdf_{cond}_{metric}_{window}.csv", cdf_csv(rep.pooled(cond, metric, phase), metric))
    put("summary.txt", summary_text(rep))
    if rep.timing:
        put("timing.csv", TIMING_HEADER + "\n" + "".join(t.row() + "\n" for t in rep.timing.values()))
    return files


def summary_text(rep: LoopReport) -> str:
    lines = []
    for cond, metrics in rep.summary.items():
        for k, v in metrics.items():
            lines.append(f"{cond}.{k}={v!r}" if isinstance(v, float) else f"{cond}.{k}={v}")
    if "no_attack" in rep.traces:
        ref = rep.pooled("no_attack", "throughput_mbps")
        for cond in rep.traces:
            if cond != "no_attack":
                lines.append(f"{cond}.ks_throughput_vs_no_attack="
                             f"{ks_distance(rep.pooled(cond, 'throughput_mbps'), ref)!r}")
    return "\n".join(lines) + "\n"
