import json

import numpy as np
import pytest

from cacheadapt import classify, l2_normalize, load_cache, load_embeddings, parse_report
from cacheadapt.cli import main


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    rc = main([
        "gen-synthetic", "--output-dir", str(out),
        "--classes", "3", "--dim", "12", "--train-per-class", "15",
        "--test-per-class", "8", "--sigma", "0.3", "--text-noise", "0.25", "--seed", "21",
    ])
    assert rc == 0
    return out


def run(args):
    return main([str(a) for a in args])


def read_predictions(path):
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        sid, label, conf = line.split("\t")
        rows.append((sid, int(label), float(conf)))
    return rows


class TestGenSynthetic:
    def test_writes_all_artifacts(self, fixture_dir):
        for name in ("train.tfb", "test.tfb", "text.tfb", "manifest.tsv",
                     "classes.txt", "fixture.json"):
            assert (fixture_dir / name).exists()
        spec = json.loads((fixture_dir / "fixture.json").read_text())
        assert spec["num_classes"] == 3 and spec["seed"] == 21

    def test_shapes(self, fixture_dir):
        train = load_embeddings(fixture_dir / "train.tfb")
        text = load_embeddings(fixture_dir / "text.tfb")
        assert train.rows == 45 and text.rows == 3 and train.dim == 12


class TestBuildCache:
    def test_happy_path(self, fixture_dir, tmp_path, capsys):
        cache_path = tmp_path / "cache.tfc"
        rc = run(["build-cache",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--top-k", "6", "--protos-per-class", "3",
                  "--output", cache_path])
        assert rc == 0
        cache = load_cache(cache_path)
        assert cache.size == sum(min(3, c) for c in (15, 15, 15))
        assert "per-class counts" in capsys.readouterr().out

    def test_missing_file_exit_2(self, fixture_dir, tmp_path, capsys):
        rc = run(["build-cache",
                  "--train-embeddings", tmp_path / "nope.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--output", tmp_path / "c.tfc"])
        assert rc == 2
        assert "nope.tfb" in capsys.readouterr().err

    def test_k_below_n_exit_2(self, fixture_dir, tmp_path, capsys):
        rc = run(["build-cache",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--top-k", "2", "--protos-per-class", "5",
                  "--output", tmp_path / "c.tfc"])
        assert rc == 2
        assert "top_k" in capsys.readouterr().err

    def test_truncated_embeddings_exit_3(self, fixture_dir, tmp_path):
        broken = tmp_path / "broken.tfb"
        broken.write_bytes((fixture_dir / "train.tfb").read_bytes()[:20])
        rc = run(["build-cache",
                  "--train-embeddings", broken,
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--output", tmp_path / "c.tfc"])
        assert rc == 3

    def test_zero_norm_row_exit_4(self, fixture_dir, tmp_path):
        import struct

        dead = tmp_path / "zero.tfb"
        payload = struct.pack("<4sII", b"TFB1", 1, 3) + struct.pack("<3f", 0, 0, 0) + b"z\n"
        dead.write_bytes(payload)
        rc = run(["build-cache",
                  "--train-embeddings", dead,
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--output", tmp_path / "c.tfc"])
        assert rc == 4


@pytest.fixture(scope="module")
def cache_path(fixture_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "cache.tfc"
    rc = main(["build-cache",
               "--train-embeddings", str(fixture_dir / "train.tfb"),
               "--text-embeddings", str(fixture_dir / "text.tfb"),
               "--class-names", str(fixture_dir / "classes.txt"),
               "--output", str(path)])
    assert rc == 0
    return path


class TestInfer:
    def test_no_cache_equals_zeroshot_oracle(self, fixture_dir, tmp_path):
        out = tmp_path / "preds.tsv"
        rc = run(["infer",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--no-cache", "--output", out])
        assert rc == 0
        test = l2_normalize(load_embeddings(fixture_dir / "test.tfb"))
        text = l2_normalize(load_embeddings(fixture_dir / "text.tfb"))
        zs = classify(test, text, 100.0)
        rows = read_predictions(out)
        assert [r[0] for r in rows] == list(test.ids)
        np.testing.assert_array_equal([r[1] for r in rows], zs.labels)
        np.testing.assert_allclose([r[2] for r in rows], zs.confidence, rtol=0, atol=0)

    def test_cache_mode_deterministic_across_runs(self, fixture_dir, cache_path, tmp_path):
        paths = [tmp_path / "a.tsv", tmp_path / "b.tsv"]
        for p in paths:
            rc = run(["infer",
                      "--test-embeddings", fixture_dir / "test.tfb",
                      "--text-embeddings", fixture_dir / "text.tfb",
                      "--cache", cache_path, "--output", p])
            assert rc == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_dimension_mismatch_exit_2(self, fixture_dir, tmp_path):
        other = tmp_path / "otherdim"
        assert main(["gen-synthetic", "--output-dir", str(other),
                     "--classes", "3", "--dim", "6", "--train-per-class", "2",
                     "--test-per-class", "2", "--seed", "1"]) == 0
        rc = run(["infer",
                  "--test-embeddings", other / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--no-cache", "--output", tmp_path / "p.tsv"])
        assert rc == 2

    def test_config_header_echoed(self, fixture_dir, cache_path, tmp_path):
        out = tmp_path / "preds.tsv"
        run(["infer",
             "--test-embeddings", fixture_dir / "test.tfb",
             "--text-embeddings", fixture_dir / "text.tfb",
             "--cache", cache_path, "--gamma", "0.25", "--output", out])
        header = out.read_text().splitlines()[0]
        assert header.startswith("# config ")
        assert json.loads(header[len("# config "):])["gamma"] == 0.25


class TestTrainEval:
    def test_train_writes_checkpoint_and_report(self, fixture_dir, cache_path, tmp_path):
        ckpt, rpt = tmp_path / "adapters.tfa", tmp_path / "train.jsonl"
        rc = run(["train",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--cache", cache_path,
                  "--epochs", "2", "--batch-size", "16", "--learning-rate", "0.001",
                  "--output", ckpt, "--report", rpt])
        assert rc == 0 and ckpt.exists()
        lines = [json.loads(l) for l in rpt.read_text().splitlines()]
        assert lines[0]["format"] == "cacheadapt-train-report"
        assert len(lines) == 4  # header + 2 epochs + final
        assert "final_pseudo_accuracy" in lines[-1]

    def test_lr_zero_train_matches_shorter_run(self, fixture_dir, cache_path, tmp_path):
        # lr=0 training is a no-op, so 3 epochs and 1 epoch give the same weights
        evals = []
        for epochs in ("3", "1"):
            ckpt = tmp_path / f"ck{epochs}.tfa"
            out = tmp_path / f"ev{epochs}.jsonl"
            assert run(["train",
                        "--train-embeddings", fixture_dir / "train.tfb",
                        "--text-embeddings", fixture_dir / "text.tfb",
                        "--cache", cache_path, "--learning-rate", "0",
                        "--epochs", epochs, "--batch-size", "16",
                        "--output", ckpt]) == 0
            assert run(["eval",
                        "--test-embeddings", fixture_dir / "test.tfb",
                        "--text-embeddings", fixture_dir / "text.tfb",
                        "--class-names", fixture_dir / "classes.txt",
                        "--manifest", fixture_dir / "manifest.tsv",
                        "--mode", "adapter", "--adapter-checkpoint", ckpt,
                        "--output", out]) == 0
            evals.append(parse_report(out)[0].accuracy)
        assert evals[0] == evals[1]

    def test_eval_degenerate_fixture_perfect(self, tmp_path):
        easy = tmp_path / "easy"
        assert main(["gen-synthetic", "--output-dir", str(easy),
                     "--classes", "3", "--dim", "8", "--train-per-class", "4",
                     "--test-per-class", "4", "--sigma", "0", "--text-noise", "0",
                     "--seed", "2"]) == 0
        out = tmp_path / "report.jsonl"
        rc = run(["eval",
                  "--test-embeddings", easy / "test.tfb",
                  "--text-embeddings", easy / "text.tfb",
                  "--class-names", easy / "classes.txt",
                  "--manifest", easy / "manifest.tsv",
                  "--mode", "zeroshot", "--output", out])
        assert rc == 0
        assert parse_report(out)[0].accuracy == 1.0

    def test_config_file_overridden_by_flags(self, fixture_dir, cache_path, tmp_path):
        cfg_file = tmp_path / "run.yaml"
        cfg_file.write_text("gamma: 0.5\ntheta: 0.9\n")
        out = tmp_path / "report.jsonl"
        rc = run(["eval",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--manifest", fixture_dir / "manifest.tsv",
                  "--mode", "cache", "--cache", cache_path,
                  "--config", cfg_file, "--gamma", "2.0", "--output", out])
        assert rc == 0
        echoed = parse_report(out)[0].config
        assert echoed["gamma"] == 2.0  # flag wins
        assert echoed["theta"] == 0.9  # file value survives

    def test_unknown_config_key_exit_2(self, fixture_dir, tmp_path):
        cfg_file = tmp_path / "bad.yaml"
        cfg_file.write_text("gamm: 0.5\n")
        rc = run(["infer",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--no-cache", "--config", cfg_file, "--output", tmp_path / "p.tsv"])
        assert rc == 2


class TestSweep:
    def test_alpha_sweep_contains_zeroshot_point(self, fixture_dir, tmp_path):
        out = tmp_path / "sweep.jsonl"
        rc = run(["sweep",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--manifest", fixture_dir / "manifest.tsv",
                  "--alphas", "0,0.2", "--epochs", "1", "--batch-size", "16",
                  "--output", out])
        assert rc == 0
        reports = parse_report(out)
        zs_out = tmp_path / "zs.jsonl"
        assert run(["eval",
                    "--test-embeddings", fixture_dir / "test.tfb",
                    "--text-embeddings", fixture_dir / "text.tfb",
                    "--class-names", fixture_dir / "classes.txt",
                    "--manifest", fixture_dir / "manifest.tsv",
                    "--mode", "zeroshot", "--output", zs_out]) == 0
        zs_acc = parse_report(zs_out)[0].accuracy
        init_at_zero = [r for r in reports
                        if r.mode == "adapter-init" and r.config["alpha"] == 0.0]
        assert len(init_at_zero) == 1
        assert init_at_zero[0].accuracy == zs_acc

    def test_gamma_sweep_without_training(self, fixture_dir, tmp_path):
        out = tmp_path / "gsweep.jsonl"
        rc = run(["sweep",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--manifest", fixture_dir / "manifest.tsv",
                  "--gammas", "0,1,2", "--output", out])
        assert rc == 0
        reports = parse_report(out)
        assert [r.config["gamma"] for r in reports] == [0.0, 1.0, 2.0]
        assert all(r.mode == "cache" for r in reports)


class TestEvalSuite:
    def test_suite_emits_all_cells(self, fixture_dir, tmp_path):
        out = tmp_path / "suite.jsonl"
        rc = run(["eval", "--suite",
                  "--train-embeddings", fixture_dir / "train.tfb",
                  "--test-embeddings", fixture_dir / "test.tfb",
                  "--text-embeddings", fixture_dir / "text.tfb",
                  "--class-names", fixture_dir / "classes.txt",
                  "--manifest", fixture_dir / "manifest.tsv",
                  "--epochs", "1", "--batch-size", "16",
                  "--output", out])
        assert rc == 0
        modes = [r.mode for r in parse_report(out)]
        assert "zeroshot" in modes and "filter-double" in modes and "measure-semantic" in modes
