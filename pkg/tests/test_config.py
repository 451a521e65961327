import numpy as np
import pytest

from reexsim.config import ConfigError, check_text, default_text, load_config, validate_config
from reexsim.physmodel import ghz


def violations(text):
    return [str(v) for v in check_text(text)[1]]


def test_default_is_clean(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(default_text())
    assert validate_config(path) == []
    assert check_text(default_text())[1] == []


def test_negative_pulse_length():
    v = violations(default_text().replace("pulse_fwhm: 80.0", "pulse_fwhm: -1"))
    assert len(v) == 1 and v[0].startswith("laser.pulse_fwhm:")
    assert "line 10" in v[0]


def test_unknown_key_named():
    v = violations(default_text().replace("seed: 1", "seed: 1\nbogus: 2"))
    assert v == ["bogus: unknown key (line 6, column 1)"]


def test_nested_unknown_filter_key():
    v = violations(default_text().replace("fwhm: 120.0, floor", "fwhm: 120.0, flor"))
    assert v[0].startswith("detection.shared_filters[0].flor: unknown key")


def test_type_error_and_duplicate():
    assert "expected float" in violations(default_text().replace("lifetime: 465.0", "lifetime: abc"))[0]
    assert "duplicate key" in violations(default_text() + "\nseed: 3\n")[0]


def test_parse_error_has_position():
    v = violations("laser: [1")
    assert "parse error" in v[0] and "line 1" in v[0]


@pytest.mark.parametrize(
    "old,new,path",
    [
        ("arm_b_channel: 2", "arm_b_channel: 1", "detection.clock_channel"),
        ("temperature: 4.0", "temperature: -4.0", "phonons.temperature"),
        ("splitter_ratio: 0.5", "splitter_ratio: 1.5", "detection.splitter_ratio"),
        ("laser_off_threshold: 1.0e-3", "laser_off_threshold: 1.0", "simulation.laser_off_threshold"),
        ("n_pulses: 1000000", "n_pulses: 0", "simulation.n_pulses"),
        ("pulse_fwhm: 80.0", "pulse_fwhm: 4000.0", "laser"),
        ("first_photon_gate: [350.0, 3000.0]", "first_photon_gate: [3000.0, 350.0]", "analysis.first_photon_gate"),
    ],
)
def test_physical_invariants_revalidated(old, new, path):
    v = violations(default_text().replace(old, new))
    assert v and any(s.startswith(path) for s in v), v


def test_load_builds_records():
    cfg = load_config()
    p = cfg.laser()
    assert p.detuning == pytest.approx(ghz(125))
    assert p.pulse_fwhm == pytest.approx(80e-12)
    assert cfg.emitter().lifetime == pytest.approx(465e-12)
    chain = cfg.chain()
    assert chain.rep_period_ps == 13166
    assert [d.jitter_fwhm for d in chain.detectors] == pytest.approx([26e-12, 29e-12])
    assert all(d.jitter_fwhm == 0 for d in cfg.chain(jitter=False).detectors)
    assert len(cfg.scan_filters(-20.0)) == 2
    assert cfg.scan_filters(-20.0)[0].center == pytest.approx(ghz(-20))
    assert cfg.purity_filter().fwhm == pytest.approx(ghz(6.0))


def test_overrides_revalidate():
    cfg = load_config()
    assert cfg.with_overrides({"laser.pulse_fwhm": 40}).laser().pulse_fwhm == pytest.approx(40e-12)
    assert cfg.laser().pulse_fwhm == pytest.approx(80e-12)
    with pytest.raises(ConfigError) as info:
        cfg.with_overrides({"laser.pulse_fwhm": -4})
    assert info.value.violations[0].path == "laser.pulse_fwhm"
    with pytest.raises(ConfigError):
        cfg.with_overrides({"laser.nope": 4})


def test_null_purity_filter_disables_it():
    cfg = load_config().with_overrides({"experiments.purity_filter": None})
    assert cfg.purity_filter() is None


def test_load_rejects_bad_text():
    with pytest.raises(ConfigError):
        load_config(text="laser: {pulse_fwhm: -1}\n")


def test_snapshot_is_detached():
    cfg = load_config()
    snap = cfg.snapshot()
    snap["laser"]["detuning"] = -1
    assert cfg["laser"]["detuning"] == 125.0
    assert np.isclose(cfg.rep_period, 1 / 75.95e6)
