import pytest

from ddrobin.config import ConfigError, RunConfig, load, loads, save


def test_roundtrip(tmp_path):
    cfg = RunConfig(preset="corrosion", params={"Psi": 0.5}, resolution=64, T=0.5, dt=0.05, picard_tol=1e-9)
    path = tmp_path / "c.yaml"
    save(cfg, path)
    assert load(path) == cfg
    assert loads(cfg.dumps()) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "preset: corrosion\nbogus: 1\n",
        "params: {}\n",
        "preset: corrosion\nT: -1\n",
        "preset: corrosion\ndt: 0\n",
        "preset: corrosion\nT: 1\ndt: 0.3\n",
        "preset: corrosion\npicard: {tol: 0}\n",
        "preset: corrosion\npicard: {foo: 1}\n",
        "preset: corrosion\ncadence: 0\n",
        "preset: corrosion\nparams: [1, 2]\n",
        "- just a list\n",
        "preset: [unclosed\n",
    ],
)
def test_invalid(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.yaml")


def test_overrides():
    cfg = RunConfig(preset="corrosion", params={"Psi": 0.0})
    new = cfg.with_overrides({"params.Psi": 0.5, "dt": 0.02, "picard.tol": 1e-8})
    assert new.params["Psi"] == 0.5 and new.dt == 0.02 and new.picard_tol == 1e-8
    assert cfg.params["Psi"] == 0.0
