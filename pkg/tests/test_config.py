import pytest
import yaml

from conftest import ROOT

from gumbel_prune.config import ConfigError, load_config, parse_config


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


BASE = """\
task:
  kind: synthetic
  scenario: sharing
network:
  hidden: [4]
train:
  epochs: 2
"""


def test_defaults(tmp_path):
    cfg = load_config(write(tmp_path, BASE))
    assert cfg.layer_sizes == [5, 4, 2]
    assert cfg.task["test_fraction"] == 0.25
    assert cfg.train.loss_kind == "sigmoid_bce"
    assert cfg.mode == "gumbel" and cfg.seeds == [0]


@pytest.mark.parametrize("text,line,match", [
    (BASE + "bogus: 1\n", 8, "unknown key"),
    (BASE + "  warp: 9\n", 8, "unknown train option"),
    (BASE.replace("sharing", "tangled"), 3, "unknown scenario"),
    (BASE.replace("epochs: 2", "epochs: 0"), 6, "invalid train"),
    (BASE + "mode: lottery\n", 8, "mode"),
    (BASE.replace("hidden: [4]", "hidden: [4]\n  init_retain_prob: 1.5"), 6, "init_retain_prob"),
    (BASE + "exports: {glitter: true}\n", 8, "unknown export"),
    (BASE + "seeds: [-1]\n", 8, "seeds"),
])
def test_errors_name_the_line(tmp_path, text, line, match):
    with pytest.raises(ConfigError, match=match) as info:
        load_config(write(tmp_path, text))
    assert info.value.line == line
    assert f"c.yaml:{line}:" in str(info.value)


def test_yaml_syntax_error(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, "task: [unclosed\nnetwork: {}\n"))
    assert info.value.line is not None


def test_wrong_width(tmp_path):
    with pytest.raises(ConfigError, match="inputs"):
        load_config(write(tmp_path, BASE.replace("hidden: [4]", "layers: [3, 4, 2]")))


def test_missing_csv_is_io_error(tmp_path):
    text = "task:\n  kind: csv\n  path: nowhere.csv\n  schema: {a: numeric}\n"
    with pytest.raises(FileNotFoundError, match="nowhere.csv"):
        load_config(write(tmp_path, text))


def test_random_mode_density_defaults_to_target(tmp_path):
    text = BASE.replace("epochs: 2", "epochs: 2\n  d_target: 0.2") + "mode: random\n"
    assert load_config(write(tmp_path, text)).baseline_density == 0.2


def test_gate_optimizer_passthrough(tmp_path):
    text = BASE.replace("epochs: 2", "epochs: 2\n  gate_optimizer: sgd\n  gate_learning_rate: 0.5")
    cfg = load_config(write(tmp_path, text))
    assert cfg.train.gate_optimizer == "sgd" and cfg.train.gate_learning_rate == 0.5
    assert cfg.to_dict()["train"]["gate_optimizer"] == "sgd"


@pytest.mark.parametrize("name", ["synthetic_independence.yaml", "synthetic_sweep.yaml"])
def test_shipped_configs_parse(name):
    cfg = load_config(ROOT / "configs" / name)
    assert cfg.layer_sizes[0] == 6 and cfg.train.gate_optimizer == "sgd"


def test_json_subset():
    raw = yaml.safe_load('{"task": {"kind": "synthetic"}, "network": {"hidden": []}}')
    assert parse_config(raw).layer_sizes == [6, 2]
