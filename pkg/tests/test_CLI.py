import json

import numpy as np
import pytest
from PIL import Image

import OSADPython
from OSADPython import cli


@pytest.fixture
def config_file(tmp_path):
    config = OSADPython.TrainConfig(
        input_size=32,
        crop_size=28,
        encoder_channels=(2, 2, 4, 4, 4),
        decoder_channels=4,
        num_bases=2,
        basis_channels=4,
        n_queries=2,
        steps=5,
        eval_episodes=2,
    )
    return config.to_file(tmp_path / "train.cfg")


def test_pipeline(tmp_path, config_file):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(data), "--episodes", "3", "--seed", "1", "--n-queries", "2"]) == 0
    assert len(list((data / "images").glob("*.png"))) == 6
    assert json.loads((data / "categories.json").read_text()) == {"0": "contain", "1": "support", "2": "roll"}
    assert OSADPython.load_pad_dir(data).folds.k == 3

    ckpt = tmp_path / "model.ckpt"
    trace = tmp_path / "trace.jsonl"
    assert cli.main(["train", "--config", str(config_file), "--data", str(data), "--fold", "1", "--out", str(ckpt),
                     "--steps", "1", "--trace", str(trace)]) == 0
    checkpoint = OSADPython.load_checkpoint(ckpt)
    assert checkpoint.step == 1
    assert checkpoint.config["fold_id"] == 1
    assert len(trace.read_text().splitlines()) == 1

    report = tmp_path / "metrics.jsonl"
    baseline = tmp_path / "baseline.jsonl"
    assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--fold", "1", "--report", str(report),
                     "--episodes", "2", "--n-queries", "2", "--workers", "2", "--baseline", str(baseline)]) == 0
    for path in (report, baseline):
        loaded = OSADPython.MetricsReport.read(path)
        assert loaded.count == 4
        assert loaded.fold_id == 1

    out = tmp_path / "pred"
    support = sorted((data / "support").glob("*.png"))[0]
    queries = sorted((data / "images").glob("*.png"))[:2]
    assert cli.main(["predict", "--ckpt", str(ckpt), "--support", str(support),
                     "--support-ann", str(support.with_suffix(".json")),
                     "--queries"] + [str(q) for q in queries] + ["--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["outputs"]) == 2
    for query in queries:
        with Image.open(out / query.name) as img:
            assert img.size == (64, 64)


def test_train_synthetic(tmp_path, config_file):
    ckpt = tmp_path / "model.ckpt"
    assert cli.main(["--log-level", "WARNING", "train", "--config", str(config_file), "--fold", "2",
                     "--out", str(ckpt), "--steps", "1"]) == 0
    assert OSADPython.load_checkpoint(ckpt).config["fold_id"] == 2


def test_usage_errors(tmp_path, config_file):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["train", "--fold", "5", "--out", str(tmp_path / "x.ckpt")]) == cli.EXIT_USAGE
    assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--episodes", "0"]) == cli.EXIT_USAGE
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg"), "--fold", "1",
                     "--out", str(tmp_path / "x.ckpt")]) == cli.EXIT_USAGE

    broken = tmp_path / "broken.cfg"
    broken.write_text("learning_rate = fast\n")
    assert cli.main(["train", "--config", str(broken), "--fold", "1", "--out", str(tmp_path / "x.ckpt")]) == 1


def test_data_errors(tmp_path, config_file):
    assert cli.main(["train", "--config", str(config_file), "--data", str(tmp_path / "missing"), "--fold", "1",
                     "--out", str(tmp_path / "x.ckpt")]) == cli.EXIT_DATA

    data = tmp_path / "data"
    cli.main(["gen-data", "--out", str(data), "--episodes", "3"])
    annotation = sorted((data / "support").glob("*.json"))[0]
    content = json.loads(annotation.read_text())
    content["object_box"] = [70, 0, 10, 10]
    annotation.write_text(json.dumps(content))
    assert cli.main(["train", "--config", str(config_file), "--data", str(data), "--fold", "1",
                     "--out", str(tmp_path / "x.ckpt"), "--steps", "1"]) == cli.EXIT_DATA

    sorted((data / "images").glob("*.png"))[0].write_bytes(b"junk")
    annotation.write_text(json.dumps(dict(content, object_box=[20, 20, 30, 30])))
    assert cli.main(["train", "--config", str(config_file), "--data", str(data), "--fold", "1",
                     "--out", str(tmp_path / "x.ckpt"), "--steps", "1"]) == cli.EXIT_DATA
    assert not (tmp_path / "x.ckpt").exists()


def test_divergence(tmp_path, config_file, monkeypatch):
    build_network = OSADPython.trainer.build_network

    def diverging_network(config):
        network = build_network(config)
        name = "decoder.head1.bias"
        network.set_parameter(name, np.full(network.parameters()[name].shape, np.nan))
        return network

    monkeypatch.setattr(OSADPython.trainer, "build_network", diverging_network)
    ckpt = tmp_path / "model.ckpt"
    assert cli.main(["train", "--config", str(config_file), "--fold", "1", "--out", str(ckpt),
                     "--steps", "2"]) == cli.EXIT_DIVERGENCE
    assert not ckpt.exists()
