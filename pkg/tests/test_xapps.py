import numpy as np
import pytest

from oransim import models
from oransim.attacks import AttackConfig
from oransim.datagen import CWI, SOI
from oransim.ric import ADAPTIVE_MCS, FIXED_MAX_MCS, KPM_KEY, SPEC_KEY
from oransim.sdl import RicDatabase, pack_array, sdl_get_latest, sdl_put, unpack_array
from oransim.xapps import InterClassXapp, MaliciousXapp, ScenarioPhase, interclass_step, malicious_step


@pytest.fixture
def setup():
    db = RicDatabase(clock=lambda: 0.0)
    writer = db.handle("ric", write=True)
    model = models.build_kpm_model(seed=0)
    return db, writer, model


def test_one_decision_per_version(setup):
    db, writer, model = setup
    x = InterClassXapp("kpm", model, db.handle("interclass"))
    assert x.step() is None  # nothing stored yet
    sdl_put(writer, KPM_KEY, pack_array(np.full(60, 0.5)))
    d = interclass_step(x)
    assert d is not None and d.cause == models.predict(model, np.full(60, 0.5))[0]
    assert x.step() is None
    sdl_put(writer, KPM_KEY, pack_array(np.zeros(60)))
    assert x.step() is not None and x.last_version == 2
    sdl_put(writer, SPEC_KEY, pack_array(np.zeros(3)))  # other keys are ignored
    assert x.step() is None


def test_decision_maps_to_action(setup):
    db, writer, _ = setup
    m = models.build_kpm_model(seed=0)
    w, b = m.params[-1]
    w[:] = 0.0
    for cls, action in ((SOI, FIXED_MAX_MCS), (CWI, ADAPTIVE_MCS)):
        b[:] = [1.0, 0.0] if cls == SOI else [0.0, 1.0]
        x = InterClassXapp("kpm", m, db.handle("i"))
        sdl_put(writer, KPM_KEY, pack_array(np.zeros(60)))
        assert x.step().action == action


def test_malicious_rewrites_toward_soi_without_touching_model(setup):
    db, writer, model = setup
    before = model.param_bytes()
    mal = MaliciousXapp("pgd", AttackConfig(epsilon=0.1, prob_floor=None), model,
                        db.handle("mal", write=True), KPM_KEY)
    x0 = np.random.default_rng(0).uniform(0, 1, 60)
    sdl_put(writer, KPM_KEY, pack_array(x0))
    assert malicious_step(mal) == 2
    assert mal.step() is None  # its own write is not attacked again
    adv = unpack_array(sdl_get_latest(db.handle("r"), KPM_KEY).value)
    assert np.max(np.abs(adv - x0)) <= 0.1 + 1e-9
    assert model.param_bytes() == before and mal.perturbed == {1: 2}
    assert mal.gradient_evals == 5


def test_malicious_commit_loses_race(setup):
    db, writer, model = setup
    mal = MaliciousXapp("fgsm", AttackConfig(), model, db.handle("mal", write=True), KPM_KEY)
    sdl_put(writer, KPM_KEY, pack_array(np.zeros(60)))
    version, value = mal.craft()
    sdl_put(writer, KPM_KEY, pack_array(np.ones(60)))  # fresh data lands first
    assert mal.commit(version, value) is None
    assert mal.gradient_evals == 1


def test_malicious_validation(setup):
    db, _, model = setup
    with pytest.raises(ValueError):
        MaliciousXapp("cw", AttackConfig(), model, db.handle("m", write=True), KPM_KEY)
    with pytest.raises(ValueError):
        MaliciousXapp("fgsm", AttackConfig(target_label=1), model, db.handle("m", write=True), KPM_KEY)
    with pytest.raises(ValueError):
        MaliciousXapp("fgsm", AttackConfig(), model, db.handle("m"), KPM_KEY)


def test_phase_and_variant_validation(setup):
    db, _, model = setup
    with pytest.raises(ValueError):
        ScenarioPhase(defense="both")
    with pytest.raises(ValueError):
        InterClassXapp("audio", model, db.handle("i"))
