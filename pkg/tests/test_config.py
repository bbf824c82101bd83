import pytest
from hypothesis import given, settings, strategies as st

from clgdrive import config as cfgmod
from clgdrive.config import ConfigError, DataFileError, RunConfig


def test_defaults_round_trip_bytes(tmp_path):
    cfgmod.save(RunConfig(), tmp_path / "a.toml")
    again = cfgmod.load(tmp_path / "a.toml")
    cfgmod.save(again, tmp_path / "b.toml")
    assert (tmp_path / "a.toml").read_bytes() == (tmp_path / "b.toml").read_bytes()
    assert again == RunConfig()


def test_desk_config_round_trip():
    cfg = cfgmod.desk_config("sparse_binary", seed=4)
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg
    assert cfg.trainer.hidden_sizes == (64, 64) and cfg.simulator.n_traffic == 0


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["clg", "pos_only", "neg_only", "lord", "vlm_sr", "vlm_rm", "sparse_binary"]),
       st.floats(0.01, 0.99), st.integers(0, 50), st.floats(0.5, 3.0),
       st.lists(st.integers(1, 512), min_size=1, max_size=3), st.integers(0, 2**31))
def test_arbitrary_configs_round_trip(mode, alpha, traffic, rho, hidden, seed):
    doc = RunConfig().to_dict()
    doc["reward"].update(mode=mode, alpha=alpha, beta=1.0 - alpha, rho=rho)
    doc["simulator"]["n_traffic"] = traffic
    doc["trainer"].update(hidden_sizes=hidden, seed=seed)
    cfg = cfgmod.from_dict(doc)
    text = cfgmod.dumps(cfg)
    assert cfgmod.dumps(cfgmod.loads(text)) == text
    assert cfgmod.loads(text) == cfg


def test_partial_file_takes_defaults():
    cfg = cfgmod.loads('[reward]\nmode = "lord"\n')
    assert cfg.reward.mode == "lord" and cfg.trainer == RunConfig().trainer


@pytest.mark.parametrize("text, needle", [
    ("[reward]\nmodee = 'clg'\n", "modee"),
    ("[rewards]\n", "rewards"),
    ("[trainer]\nbatch_size = 'big'\n", "integer"),
    ("[trainer]\ngamma = 1.5\n", "gamma"),
    ("[reward]\nmode = 'bogus'\n", "bogus"),
    ("[simulator]\ndt = -1\n", "simulator"),
    ("[buffer]\ncapacity = 10\nlabel_batch = 20\n", "label_batch"),
    ("provider = 'magic'\n", "provider"),
    ("[trainer]\nhidden_sizes = [64, 'x']\n", "integers"),
    ("not toml [", "TOML"),
])
def test_invalid_configs(text, needle):
    with pytest.raises(ConfigError, match=needle):
        cfgmod.loads(text)


def test_missing_referenced_file(tmp_path):
    (tmp_path / "c.toml").write_text('provider = "store:missing.vlme"\n')
    with pytest.raises(DataFileError):
        cfgmod.load(tmp_path / "c.toml")
    cfg = cfgmod.load(tmp_path / "c.toml", check_files=False)
    assert cfg.resolve("missing.vlme") == tmp_path / "missing.vlme"


def test_missing_config_file(tmp_path):
    with pytest.raises(DataFileError):
        cfgmod.load(tmp_path / "absent.toml")


def test_stack_follows_config():
    cfg = cfgmod.loads('[reward]\nmode = "vlm_rm"\nrho = 0.5\n')
    stack = cfg.make_stack()
    assert stack.paradigm.mode == "vlm_rm" and stack.synthesis_cfg.rho == 0.5
    assert stack.rm_target is not None
