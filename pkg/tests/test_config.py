import pytest

from cenra.config import TrainConfig, dump_config, load_config, parse_config
from cenra.errors import ConfigurationError


def test_defaults():
    cfg = TrainConfig()
    assert cfg.cra.gamma == cfg.dqn.gamma == 0.99
    assert cfg.dqn.knowledge_weight == 0.5 and cfg.sync.alpha == 0.5 and cfg.sync.K == 100
    assert (cfg.cra.r_min, cfg.cra.r_max) == (-1.0, 1.0)
    assert (cfg.cra.batch_size, cfg.cra.lr_actor, cfg.cra.lr_critic, cfg.cra.actor_every) == (256, 3e-4, 1e-3, 2)
    assert (cfg.cra.tau, cfg.cra.burn_in) == (5e-3, 5000)
    assert (cfg.dqn.batch_size, cfg.dqn.burn_in, cfg.dqn.buffer_size) == (128, 10000, 1_000_000)
    assert cfg.run.cra_update_period == 1 and cfg.run.eval_episodes == 100 and cfg.run.total_steps == 150_000


def test_dump_parse_roundtrip():
    cfg = TrainConfig().replace(run={"seed": 7, "parallel_rollouts": True}, cra={"hidden": (8, 4)},
                                env={"train_tasks": ("maze2", "maze3")})
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_partial_file_keeps_defaults():
    cfg = parse_config("[run]\nseed = 3  # comment\n[sync]\nalpha = 0.25\n")
    assert cfg.run.seed == 3 and cfg.sync.alpha == 0.25 and cfg.sync.K == 100


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[run]\nnot_a_key = 1\n",
    "[run]\nseed = abc\n",
    "[sync]\nalpha = 1.5\n",
    "[dqn]\nknowledge_weight = 0\n",
    "[run]\nweight_mode = half\n",
    "[cra]\nr_min = 1\nr_max = -1\n",
    "no section header",
])
def test_bad_config_is_configuration_error(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_relative_suite_resolves_against_file(tmp_path):
    (tmp_path / "mazes").mkdir()
    path = tmp_path / "c.cfg"
    path.write_text("[env]\nsuite = mazes\n")
    assert load_config(path).env.suite == str((tmp_path / "mazes").resolve())


def test_replace_rejects_unknown_key():
    with pytest.raises(ConfigurationError):
        TrainConfig().replace(run={"sede": 1})
