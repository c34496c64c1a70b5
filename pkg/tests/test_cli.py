import json
from pathlib import Path

import numpy as np
import pytest

from prognas.cli import main
from prognas.genotype import genotype_parse, genotype_serialize, random_genotype


def tiny_config(tmp_path, preset="easy", out="run", **extra):
    doc = {
        "seed": 5,
        "out_dir": str(tmp_path / out),
        "dataset": {"kind": "synth", "preset": preset, "n": 64, "n_test": 32,
                    "classes": 2, "size": 8},
        "search": {
            "nodes": 2,
            "alpha_lr": 0.006,
            "stages": [
                {"cells": 2, "ops": 8, "channels": 4, "dropout": 0.0,
                 "epochs": 2, "warmup_epochs": 1, "batch_size": 16},
                {"cells": 3, "ops": 3, "channels": 4, "dropout": 0.4,
                 "epochs": 2, "warmup_epochs": 1, "batch_size": 16},
            ],
        },
        "eval": {"cells": 2, "channels": 4, "epochs": 2, "batch_size": 16},
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def search_run(tmp_path):
    cfg = tiny_config(tmp_path)
    assert main(["search", "--config", str(cfg)]) == 0
    return tmp_path, tmp_path / "run"


class TestSearchCommand:
    def test_produces_all_artifacts(self, search_run, capsys):
        _, out = search_run
        for rel in ("genotype.txt", "genotype_raw.txt", "state.json",
                    "stage_1/metrics.csv", "stage_1/metrics.png",
                    "stage_1/alpha.json", "stage_1/params.ckpt",
                    "stage_1/pruned_schema.json", "stage_2/metrics.csv"):
            assert (out / rel).exists(), rel

    def test_fixed_seed_byte_identical(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert main(["search", "--config", str(cfg), "--out",
                     str(tmp_path / "r1"), "--seed", "7"]) == 0
        assert main(["search", "--config", str(cfg), "--out",
                     str(tmp_path / "r2"), "--seed", "7"]) == 0
        for rel in ("genotype.txt", "stage_1/metrics.csv", "stage_2/metrics.csv"):
            assert (tmp_path / "r1" / rel).read_bytes() == \
                (tmp_path / "r2" / rel).read_bytes()

    def test_stage_override_applies(self, tmp_path):
        cfg = tiny_config(tmp_path, out="ov")
        assert main(["search", "--config", str(cfg),
                     "--stage-override", "epochs=3",
                     "--stage-override", "warmup_epochs=2"]) == 0
        rows = (tmp_path / "ov" / "stage_1" / "metrics.csv").read_text().strip()
        assert len(rows.splitlines()) == 4  # header + 3 epochs

    def test_writes_only_inside_out_dir(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path)
        monkeypatch.chdir(tmp_path)
        before = set(p.name for p in tmp_path.iterdir())
        assert main(["search", "--config", str(cfg)]) == 0
        after = set(p.name for p in tmp_path.iterdir())
        assert after - before == {"run"}


class TestDeriveRefine:
    def test_derive_round_trips_alpha_snapshot(self, search_run, capsys):
        tmp_path, out = search_run
        target = tmp_path / "derived.txt"
        assert main(["derive", "--alphas", str(out / "stage_2" / "alpha.json"),
                     "--out", str(target)]) == 0
        g = genotype_parse(target.read_text())
        assert g.nodes == 2

    def test_refine_caps_skips(self, search_run, capsys):
        tmp_path, out = search_run
        target = tmp_path / "refined.txt"
        assert main(["refine", "--alphas", str(out / "stage_2" / "alpha.json"),
                     "-M", "0", "--out", str(target)]) == 0
        g = genotype_parse(target.read_text())
        assert all(name != "skip_connect"
                   for picks in g.normal for name, _ in picks)

    def test_search_genotype_matches_refined_derivation(self, search_run, capsys):
        tmp_path, out = search_run
        target = tmp_path / "refined2.txt"
        assert main(["refine", "--alphas", str(out / "stage_2" / "alpha.json"),
                     "-M", "2", "--out", str(target)]) == 0
        assert target.read_text() == (out / "genotype.txt").read_text()


class TestStats:
    def test_flat_genotype_reports_level_one(self, tmp_path, capsys):
        cells = tuple((("sep_conv_3x3", 0), ("skip_connect", 1))
                      for _ in range(2))
        from prognas.genotype import Genotype
        g = Genotype(cells, cells, (2, 3))
        gpath = tmp_path / "g.txt"
        gpath.write_text(genotype_serialize(g))
        out = tmp_path / "stats"
        assert main(["stats", "--genotype", str(gpath), "--out", str(out),
                     "--cells", "3", "--channels", "4"]) == 0
        rows = (out / "levels_normal.csv").read_text().strip().splitlines()
        assert rows == ["level,count", "1,4"]
        summary = json.loads((out / "stats.json").read_text())
        assert summary["skip_count_normal"] == 2
        assert summary["param_count"] > 0
        assert (out / "levels.png").exists()

    def test_rejects_bad_genotype_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("{not json")
        assert main(["stats", "--genotype", str(bad),
                     "--out", str(tmp_path / "s")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR ")
        payload = json.loads(err[6:])
        assert payload["error"] == "ValueError"


class TestEval:
    def test_trains_from_genotype(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, out="evalrun")
        g = random_genotype(np.random.default_rng(0), nodes=2)
        gpath = tmp_path / "g.txt"
        gpath.write_text(genotype_serialize(g))
        assert main(["eval", "--config", str(cfg), "--genotype", str(gpath)]) == 0
        out = tmp_path / "evalrun"
        assert (out / "metrics.csv").exists()
        assert (out / "metrics.png").exists()
        assert (out / "model.ckpt").exists()
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,test_acc,lr"


class TestGradcheckCommand:
    def test_small_suite_exits_zero(self, capsys):
        assert main(["gradcheck", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestErrors:
    def test_config_error_is_machine_readable(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"seed": "x"}))
        assert main(["search", "--config", str(p)]) == 1
        err = capsys.readouterr().err
        payload = json.loads(err[len("ERROR "):])
        assert payload["field"] == "<root>.seed"

    def test_unknown_flag_exits_nonzero(self):
        with pytest.raises(SystemExit) as e:
            main(["search", "--bogus"])
        assert e.value.code == 2
