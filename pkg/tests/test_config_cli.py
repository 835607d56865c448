import csv
from pathlib import Path

import pytest

from frlpoison import cli
from frlpoison.config import Condition, attacker_count, parse_config, parse_config_text
from frlpoison.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_minimal_config_gets_defaults():
    spec = parse_config_text("[federation]\nenv = pendulum\nlearner = ppo\n")
    f = spec.federation
    assert (f.gamma, f.lr, f.local_steps, f.rounds) == (0.99, 0.001, 50, 200)
    assert (f.attack.epsilon, f.eval_episodes, f.defense_test_episodes) == (1.0, 100, 10)
    assert f.env_id == "pendulum" and f.learner.kind == "ppo"
    assert spec.n_seeds == 1 and [c.label for c in spec.conditions] == ["clean"]


def test_large_budget_accepted():
    spec = parse_config_text("[federation]\nenv = cartpole\n[attack]\nepsilon = 100\n")
    assert spec.federation.attack.epsilon == 100.0


def test_negative_rounds_names_key_and_line():
    with pytest.raises(ConfigError, match=r"<config>:3: key 'rounds'"):
        parse_config_text("[federation]\nenv = cartpole\nrounds = -5\n")
    with pytest.raises(ConfigError, match="rounds"):
        parse_config_text("[federation]\nrounds = 0\n")


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r":4: unknown key 'lerning_rate'"):
        parse_config_text("# comment\n[federation]\nenv = cartpole\nlerning_rate = 0.1\n")


@pytest.mark.parametrize("text,needle", [
    ("env = cartpole\n", "before any section"),
    ("[bogus]\n", "unknown section"),
    ("[federation]\nenv\n", "expected 'key = value'"),
    ("[federation]\nenv = a\nenv = b\n", "duplicate key 'env'"),
    ("[federation]\nenv = hopper\n", "key 'env'"),
    ("[federation]\nn_agents = four\n", "key 'n_agents'"),
    ("[federation]\nn_agents = 2\nattackers = 2\n", "key 'attackers'"),
    ("[experiment]\nconditions = clean, poisoned\n", "key 'conditions'"),
    ("[experiment]\nconditions = targeted\n", "target"),
    ("[experiment]\nname = a/b\n", "filesystem-safe"),
    ("[federation]\ngamma = 1.5\n", "gamma"),
    ("[attack]\ntarget = 7\n", "key 'target'"),
    ("[sweep]\nsizes = 4\nattacker_fraction = 1.5\n", "attacker_fraction"),
    ("[theory]\nfamilies = nope\n", "unknown analytic families"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config_text(text)


def test_conditions_grammar():
    c = Condition.parse("untargeted+single+defense")
    assert (c.mode, c.critic_mode, c.aggregation) == ("untargeted", "single", "defense")
    with pytest.raises(ConfigError):
        Condition.parse("random+fast")
    with pytest.raises(ConfigError):
        Condition.parse("random+single+single")


def test_target_parsing():
    spec = parse_config_text("[federation]\nenv = pendulum\n[attack]\ntarget = 3\n"
                             "[experiment]\nconditions = clean, targeted\n")
    assert spec.federation.attack.target == (3.0,)
    spec = parse_config_text("[attack]\ntarget = 0\n")
    assert spec.federation.attack.target == 0


def test_attacker_counts():
    assert [attacker_count(n, 0.25) for n in (4, 8, 16)] == [1, 2, 4]
    assert attacker_count(10, 0.3) == 3 and attacker_count(5, 0.25) == 2


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    spec = parse_config(path)
    assert spec.name == path.stem


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.cfg")


def _write(tmp_path, body: str) -> Path:
    p = tmp_path / "exp.cfg"
    p.write_text(body.replace("OUT", str(tmp_path / "out")))
    return p


SMALL = """[experiment]
name = tiny
n_seeds = 2
output_dir = OUT
conditions = clean, untargeted
[federation]
env = gridworld
learner = vpg
n_agents = 3
rounds = 2
local_steps = 1
eval_episodes = 3
lr = 0.05
"""


def test_cli_run_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == [
        "clean_aggregate.csv", "clean_seed0.csv", "clean_seed1.csv",
        "untargeted_aggregate.csv", "untargeted_seed0.csv", "untargeted_seed1.csv"]
    assert cli.main(["report", str(out)]) == 0
    assert "untargeted" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "[federation]\nrounds = -1\n")
    assert cli.main(["run", str(bad)]) == 2
    assert "rounds" in capsys.readouterr().err
    assert cli.main(["report", str(tmp_path / "missing")]) == 1
    good = _write(tmp_path, SMALL)
    assert cli.main(["sweep", str(good)]) == 2  # no [sweep] section


def test_cli_theory_check(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("[experiment]\nname = t\n[theory]\nfamilies = convex-1d, shallow-concave-1d\n")
    assert cli.main(["theory-check", str(cfg), "--out", str(tmp_path / "th")]) == 0
    with open(tmp_path / "th" / "theory_convex-1d.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epsilon", "B", "eps_plus", "L_r", "J_clean", "J_poisoned",
                             "alpha_observed", "inequality_holds"]
    assert "precondition unmet" in capsys.readouterr().out


def test_cli_sweep(tmp_path):
    body = SMALL.replace("n_seeds = 2", "n_seeds = 1") + "[sweep]\nsizes = 2, 4\nattacker_fraction = 0.25\n"
    assert cli.main(["sweep", str(_write(tmp_path, body))]) == 0
    with open(tmp_path / "out" / "sweep_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["n_agents"], r["n_attackers"]) for r in rows] == [("2", "1"), ("2", "1"),
                                                                ("4", "1"), ("4", "1")]
    assert (tmp_path / "out" / "n4" / "untargeted_aggregate.csv").exists()
