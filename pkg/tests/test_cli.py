import json
from pathlib import Path

import pytest

from lowshot_re import cli
from lowshot_re.eval_harness import read_results
from lowshot_re.fixtures import load_corpus
from lowshot_re.model import ChoiceMatcher, vocabulary_for


def results_in(directory, pattern="*.json"):
    return sorted(f for f in Path(directory).glob(pattern) if not f.name.endswith(".manifest.json"))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.RESULTS_ENV, raising=False)
    raw = tmp_path / "raw.txt"
    raw.write_text(
        "\n".join(
            [
                "The service traces its history to an online service known as PlayNET .",
                "Maria joined the orchestra .",
                "The company acquired a small startup .",
                "The river flows into the lake .",
                "The band released their debut album .",
                "The city hosts a film festival .",
            ]
        )
        + "\n"
    )
    return tmp_path


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["no-such-command"])
    assert err.value.code == 2


def test_missing_config_exits_3(workdir):
    assert cli.main(["selftest", "missing.json"]) == 3


def test_unknown_keys_exit_3(workdir):
    (workdir / "c.json").write_text(json.dumps({"encoder": {"widht": 3}}))
    assert cli.main(["selftest", "--config", "c.json"]) == 3
    assert cli.main(["selftest", "--set", "nope.x=1"]) == 3
    assert cli.main(["selftest", "--set", "seed"]) == 3


def test_bad_value_exits_3(workdir):
    assert cli.main(["forge-data", "--set", "paths.raw=raw.txt", "--set", "pseudo.batch_size=0"]) == 3


def test_runtime_error_exits_1(workdir):
    assert cli.main(["forge-data", "--set", "paths.raw=missing.txt"]) == 1


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_forge_data_records_overrides(workdir):
    assert cli.main(["forge-data", "--set", "paths.raw=raw.txt", "--set", "pseudo.batch_size=3"]) == 0
    manifest = json.loads((workdir / "pseudo_corpus.jsonl.manifest.json").read_text())
    assert manifest["config"]["pseudo"]["batch_size"] == 3
    assert manifest["command"] == "forge-data" and manifest["seed"] == 0
    assert manifest["config_hash"] == cli.config_hash(manifest["config"])
    rows = [json.loads(x) for x in (workdir / "pseudo_corpus.jsonl").read_text().splitlines()]
    assert rows and all(len(r["choices"]) == 3 for r in rows)


def test_config_paths_resolve_against_config_dir(workdir):
    sub = workdir / "cfg"
    sub.mkdir()
    (sub / "run.json").write_text(json.dumps({"paths": {"raw": "../raw.txt", "pseudo": "out/p.jsonl"}, "pseudo": {"batch_size": 2}}))
    assert cli.main(["forge-data", "cfg/run.json"]) == 0
    assert (sub / "out" / "p.jsonl").is_file()


def test_hash_eval_writes_results(workdir):
    args = ["eval", "--set", "encoder.profile=hash", "--set", "episodes.count=20", "--set", "episodes.nota_rate=0.15"]
    assert cli.main(args) == 0
    files = results_in(workdir / "results", "eval-N5-K1-nota0.15-*.json")
    assert len(files) == 1
    res = read_results(files[0])
    assert res["setting"]["T"] == 20 and res["command"] == "eval"
    assert (files[0].parent / (files[0].name + ".manifest.json")).is_file()
    assert cli.main(args) == 0
    assert read_results(files[0]) == res  # reruns are byte-stable


def test_results_env_overrides_dir(workdir, monkeypatch):
    monkeypatch.setenv(cli.RESULTS_ENV, str(workdir / "elsewhere"))
    assert cli.main(["zero-shot-eval", "--set", "encoder.profile=hash", "--set", "episodes.count=3"]) == 0
    (f,) = results_in(workdir / "elsewhere", "zero-shot-eval-N5-K0-*.json")
    assert read_results(f)["adapt_epochs"] == 0


def test_checkpoint_eval_with_workers(workdir):
    corpus = load_corpus()
    model = ChoiceMatcher.create(vocabulary_for(corpus.instances, corpus.relations.values()), hidden_dim=16, layers=1, heads=2, ffn_dim=16)
    model.save(workdir / "m.ckpt")
    base = ["eval", "--set", "paths.checkpoint=m.ckpt", "--set", "episodes.count=4"]
    assert cli.main(base + ["--set", "paths.results=a"]) == 0
    assert cli.main(base + ["--set", "paths.results=b", "--workers", "2"]) == 0
    (a,), (b,) = results_in(workdir / "a"), results_in(workdir / "b")
    assert read_results(a)["per_episode"] == read_results(b)["per_episode"]
    assert cli.main(["eval", "--set", "paths.checkpoint=none.ckpt"]) == 3


def test_short_meta_train_and_pretrain(workdir):
    assert cli.main(["meta-train", "--set", "meta_train.steps=3", "--set", "encoder.hidden_dim=16", "--set", "encoder.heads=2"]) == 0
    assert (workdir / "meta_trained.ckpt").is_file() and (workdir / "meta_trained.trace.csv").is_file()
    assert cli.main(["forge-data", "--set", "paths.raw=raw.txt", "--set", "pseudo.batch_size=2"]) == 0
    over = ["--set", "pretrain.epochs=1", "--set", "pretrain.relabel=none", "--set", "encoder.hidden_dim=16", "--set", "encoder.heads=2"]
    assert cli.main(["pretrain", *over]) == 0
    lines = (workdir / "pretrained.trace.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr" and len(lines) > 1
    assert cli.main(["meta-train", "--set", "meta_train.init=pretrained", "--set", "meta_train.steps=2"]) == 0
    assert cli.main(["meta-train", "--set", "meta_train.init=other"]) == 3
