import json

import pytest

from taco.cli import main
from taco.config import SECTIONS, RunConfig, env_overrides, resolve_config
from taco.errors import ConfigError

# one key per section: (dotted key, file value, env value, flag value)
PRECEDENCE = [
    ("datagen.count", 11, 12, 13),
    ("augment.reorder_prob", 0.1, 0.2, 0.3),
    ("maem.delta", 0.1, 0.15, 0.25),
    ("model.pred_dim", 16, 32, 48),
    ("loss.tau", 0.5, 0.6, 0.7),
    ("pipeline.epochs", 3, 4, 5),
]


def _toml(tree):
    lines = []
    for dotted, value in tree.items():
        section, key = dotted.split(".")
        lines.append(f"[{section}]\n{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def _get(cfg, dotted):
    section, key = dotted.split(".")
    return getattr(getattr(cfg, section), key)


def _env(dotted, value):
    section, key = dotted.split(".")
    return {f"TACO_{section.upper()}__{key.upper()}": str(value)}


def test_precedence_covers_every_section():
    assert {k.split(".")[0] for k, *_ in PRECEDENCE} == set(SECTIONS)


@pytest.mark.parametrize("key,file_v,env_v,flag_v", PRECEDENCE)
def test_flag_over_env_over_file(tmp_path, key, file_v, env_v, flag_v):
    path = tmp_path / "c.toml"
    path.write_text(_toml({key: file_v}))
    assert _get(resolve_config(path, environ={}), key) == file_v
    cfg = resolve_config(path, environ=_env(key, env_v))
    assert _get(cfg, key) == env_v and cfg.sources[key] == "env"
    cfg = resolve_config(path, {key: flag_v}, environ=_env(key, env_v))
    assert _get(cfg, key) == flag_v and cfg.sources[key] == "flag"


def test_seed_env_and_flag():
    assert resolve_config(environ={"TACO_SEED": "9"}).seed == 9
    assert resolve_config(flags={"seed": 4}, environ={"TACO_SEED": "9"}).seed == 4


def test_lambda_spelling(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[loss]\nlambda = 0.5\n")
    cfg = resolve_config(p, environ={})
    assert cfg.loss.lam == 0.5
    assert cfg.to_dict()["loss"]["lambda"] == 0.5


@pytest.mark.parametrize("text", ["[loss]\ntemperature = 1.0\n", "[nosuch]\nx = 1\n",
                                  "bogus = 1\n", "[loss]\ntau = \"warm\"\n",
                                  "[loss]\ntau = -1.0\n"])
def test_bad_files_rejected(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        resolve_config(p, environ={})


def test_unrelated_env_ignored():
    assert env_overrides({"TACO_HOME": "/x", "PATH": "/bin"}) == {}


def test_toml_dump_reloads(tmp_path):
    cfg = resolve_config(flags={"loss.tau": 0.3, "model.widths": [8, 16, 32, 64]}, environ={})
    p = tmp_path / "dump.toml"
    p.write_text(cfg.to_toml())
    back = resolve_config(p, environ={})
    assert back.to_dict() == cfg.to_dict()


def test_show_config(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("TACO_SEED", raising=False)
    c = tmp_path / "c.toml"
    c.write_text("seed = 5\n[loss]\ntau = 0.25\n")
    code = main(["show-config", "--config", str(c), "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert code == 0
    assert "seed = 5" in out and "tau = 0.25" in out
    record = json.loads((tmp_path / "o" / "run.json").read_text())
    assert record["seed"] == 5 and record["command"] == "show-config"


def test_pretrain_without_manifest(tmp_path, capsys):
    assert main(["pretrain", "--out", str(tmp_path)]) == 1
    assert "pipeline.manifest" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["train-everything"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_set_key(tmp_path, capsys):
    assert main(["show-config", "--out", str(tmp_path), "--set", "loss.temp=1"]) == 1


def test_internal_error_exit_code(tmp_path, monkeypatch):
    import taco.cli

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(taco.cli, "run_command", boom)
    assert main(["show-config", "--out", str(tmp_path)]) == 2


TINY = ["--set", "model.widths=[8, 16, 32, 64]", "--set", "model.proj_dim=32",
        "--set", "model.pred_dim=16", "--set", "pipeline.epochs=1",
        "--set", "pipeline.batch_size=8", "--set", "pipeline.finetune_epochs=1",
        "--set", "pipeline.linear_steps=10"]


def test_end_to_end_and_replay(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["datagen", "--out", str(data), "--count", "24", "--seed", "3"]) == 0
    manifest = data / "manifest.jsonl"
    assert main(["validate", "--manifest", str(manifest), "--out", str(tmp_path / "v")]) == 0

    pre = tmp_path / "pre"
    assert main(["pretrain", "--manifest", str(manifest), "--out", str(pre),
                 "--deterministic", *TINY]) == 0
    ft = tmp_path / "ft"
    assert main(["finetune", "--manifest", str(manifest), "--checkpoint",
                 str(pre / "pretrain.pt"), "--out", str(ft), *TINY]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--manifest", str(manifest), "--checkpoint",
                 str(ft / "finetune.pt"), "--out", str(tmp_path / "ev")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert {"font", "strike", "average_accuracy"} <= set(report)

    le = tmp_path / "le"
    assert main(["linear-eval", "--manifest", str(manifest), "--random-init",
                 "--out", str(le), *TINY]) == 0

    # replaying the pretrain record reproduces the checkpoint exactly
    replay = tmp_path / "replay"
    assert main(["replay", str(pre / "run.json"), "--out", str(replay)]) == 0
    import torch
    a = torch.load(pre / "pretrain.pt", weights_only=False)["state_dict"]
    b = torch.load(replay / "pretrain.pt", weights_only=False)["state_dict"]
    assert a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_run_json_is_a_config_file(tmp_path):
    assert main(["show-config", "--out", str(tmp_path), "--seed", "8",
                 "--set", "loss.tau=0.4"]) == 0
    cfg = resolve_config(tmp_path / "run.json", environ={})
    assert cfg.seed == 8 and cfg.loss.tau == 0.4


def test_validate_reports_faults(tmp_path, capsys):
    data = tmp_path / "data"
    main(["datagen", "--out", str(data), "--count", "3"])
    (data / "images" / "000001.png").unlink()
    capsys.readouterr()
    assert main(["validate", "--manifest", str(data / "manifest.jsonl"),
                 "--out", str(tmp_path / "v")]) == 1
    assert "file\t1" in capsys.readouterr().out


def test_runconfig_roundtrip_defaults():
    cfg = RunConfig()
    other = RunConfig()
    other.update(cfg.to_dict(), "file")
    assert other.to_dict() == cfg.to_dict()
