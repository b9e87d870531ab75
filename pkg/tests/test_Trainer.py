import json
import os

import numpy as np
import pytest
from PIL import Image

import OSADPython

trainer_mod = OSADPython.trainer

run_slow = pytest.mark.skipif(
    os.environ.get("OSAD_RUN_SLOW") != "1",
    reason="long running training test, set OSAD_RUN_SLOW=1",
)


def small_config(**kwargs):
    values = {
        "input_size": 32,
        "crop_size": 28,
        "encoder_channels": (2, 2, 4, 4, 4),
        "decoder_channels": 4,
        "num_bases": 2,
        "basis_channels": 4,
        "n_queries": 2,
        "steps": 2,
        "eval_episodes": 2,
    }
    values.update(kwargs)
    return OSADPython.TrainConfig(**values)


def oracle_predictor(episode):
    return [mask.astype(np.float64) for mask in episode.gt_masks]


@pytest.fixture
def source():
    return OSADPython.SyntheticEpisodeSource()


def test_first_step_loss(source):
    config = small_config()
    trainer = OSADPython.Trainer(config, source)
    episode, queries, masks = trainer.training_batch(0)

    assert episode.n == 2
    assert all(q.shape == (3, 32, 32) for q in queries)
    assert all(m.shape == (32, 32) and m.dtype == np.uint8 for m in masks)
    assert episode.affordance_id in trainer.split.train_categories(1)

    network = trainer_mod.build_network(config)
    with OSADPython.no_grad():
        expected = network.loss(network.forward(episode.support, queries), masks).item()

    record = trainer.train_step()
    assert record.step == 0
    assert trainer.step == 1
    assert abs(record.loss - expected) < 1e-6
    assert record.episode_seed == episode.seed


def test_training_batch_deterministic(source):
    first = OSADPython.Trainer(small_config(), source).training_batch(3)
    second = OSADPython.Trainer(small_config(), source).training_batch(3)
    for a, b in zip(first[1] + first[2], second[1] + second[2]):
        assert np.array_equal(a, b)


def test_episode_pool(source):
    trainer = OSADPython.Trainer(small_config(episode_pool=2), source)
    assert trainer.episode_seed(0) == trainer.episode_seed(2)
    assert trainer.episode_seed(1) == trainer.episode_seed(5)
    assert trainer.episode_seed(0) != trainer.episode_seed(1)


def test_reproducible(tmp_path, source):
    config = small_config(steps=3)
    first = OSADPython.train(config, source)
    second = OSADPython.train(config, source)

    assert [rec.to_dict() for rec in first.losses] == [rec.to_dict() for rec in second.losses]
    a = OSADPython.save_checkpoint(tmp_path / "a.ckpt", first.checkpoint)
    b = OSADPython.save_checkpoint(tmp_path / "b.ckpt", second.checkpoint)
    assert a.read_bytes() == b.read_bytes()


def test_resume(tmp_path, source):
    config = small_config()
    straight = OSADPython.Trainer(config, source).train(steps=4)

    first = OSADPython.Trainer(config, source).train(steps=2)
    path = OSADPython.save_checkpoint(tmp_path / "step2.ckpt", first.checkpoint)
    resumed_trainer = OSADPython.Trainer.from_checkpoint(OSADPython.load_checkpoint(path), source)
    assert resumed_trainer.step == 2
    assert resumed_trainer.optimizer.t == 2
    resumed = resumed_trainer.train(steps=4)

    assert [rec.step for rec in resumed.losses] == [2, 3]
    for rec, ref in zip(resumed.losses, straight.losses[2:]):
        assert rec.episode_seed == ref.episode_seed
        assert rec.loss == ref.loss
    assert (OSADPython.save_checkpoint(tmp_path / "resumed.ckpt", resumed.checkpoint).read_bytes()
            == OSADPython.save_checkpoint(tmp_path / "straight.ckpt", straight.checkpoint).read_bytes())

    trace = straight.write_trace(tmp_path / "trace.jsonl")
    lines = [json.loads(line) for line in trace.read_text().splitlines()]
    assert [line["step"] for line in lines] == [0, 1, 2, 3]


def test_divergence(source):
    trainer = OSADPython.Trainer(small_config(), source)
    name = "decoder.head1.bias"
    trainer.network.set_parameter(name, np.full(trainer.network.parameters()[name].shape, np.nan))
    with pytest.raises(OSADPython.DivergenceError) as excinfo:
        trainer.train_step()
    assert excinfo.value.step == 0


@pytest.mark.parametrize("n", [1, 8])
def test_evaluate_oracle(source, n):
    split = source.default_split()
    report = trainer_mod.evaluate_episodes(oracle_predictor, source, split, fold=1, n_episodes=3, n_queries=n,
                                           num_workers=2)
    assert report.count == 3 * n
    assert report.iou == pytest.approx(1.0)
    assert report.mae == 0.0
    assert report.e_phi == pytest.approx(1.0)
    assert report.cc == pytest.approx(1.0)

    half = trainer_mod.evaluate_episodes(trainer_mod.constant_predictor(0.5), source, split, fold=1, n_episodes=3,
                                         n_queries=n, num_workers=2)
    assert half.mae == pytest.approx(0.5)
    assert half.cc == 0.0


def test_evaluate_workers(source):
    checkpoint = OSADPython.Trainer(small_config(), source).checkpoint()
    before = {name: arr.copy() for name, arr in checkpoint.params.items()}

    single = OSADPython.evaluate(checkpoint, source, n_episodes=4, num_workers=1)
    multi = OSADPython.evaluate(checkpoint, source, n_episodes=4, num_workers=3)

    assert single.count == 8
    assert single.records == multi.records
    assert [(r.episode_id, r.image_id) for r in multi.records] == [(e, i) for e in range(4) for i in range(2)]
    for name, arr in checkpoint.params.items():
        assert np.array_equal(arr, before[name])


def test_evaluate_errors(source):
    split = source.default_split()
    with pytest.raises(OSADPython.TrainerError):
        trainer_mod.evaluate_episodes(oracle_predictor, source, split, fold=1, n_episodes=0, n_queries=1)

    def broken(episode):
        raise OSADPython.OSADModelError("broken predictor")

    with pytest.raises(OSADPython.OSADModelError, match="broken"):
        trainer_mod.evaluate_episodes(broken, source, split, fold=1, n_episodes=2, n_queries=1, num_workers=2)


def test_baseline(source):
    config = small_config()
    report = OSADPython.evaluate_baseline(source, source.default_split(), fold=1, config=config, n_episodes=2)
    assert report.count == 4
    assert 0.0 < report.mae < 1.0
    assert report.cc == 0.0


def _write_support(tmp_path):
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    image[8:40, 4:20] = 120
    image[24:60, 20:60] = 200
    Image.fromarray(image).save(tmp_path / "support.png")
    (tmp_path / "support.json").write_text(json.dumps({"human_box": [4, 8, 20, 40], "object_box": [20, 24, 60, 60]}))
    return tmp_path / "support.png", tmp_path / "support.json"


def test_predict(tmp_path, source):
    checkpoint = OSADPython.Trainer(small_config(), source).checkpoint()
    support, annotation = _write_support(tmp_path)
    rng = np.random.default_rng(0)
    queries = []
    for name, (h, w) in (("a", (64, 64)), ("b", (48, 80))):
        path = tmp_path / f"query_{name}.png"
        Image.fromarray(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)).save(path)
        queries.append(path)

    manifest_path = OSADPython.predict(checkpoint, support, annotation, queries, tmp_path / "out1")
    OSADPython.predict(checkpoint, support, annotation, queries, tmp_path / "out2")

    manifest = json.loads(manifest_path.read_text())
    assert [entry["mask"] for entry in manifest["outputs"]] == ["query_a.png", "query_b.png"]
    assert manifest["step"] == 0

    network, config = trainer_mod.network_from_checkpoint(checkpoint)
    size = config.input_shape()
    sample = trainer_mod.fit_support(trainer_mod.read_support(support, annotation), size)
    originals = [OSADPython.episodes_pad.read_image(path) for path in queries]
    with OSADPython.no_grad():
        output = network.forward(sample, [trainer_mod.resize_hw(img, size) for img in originals])

    for entry, original, d_1 in zip(manifest["outputs"], originals, output.final_maps()):
        out_path = tmp_path / "out1" / entry["mask"]
        with Image.open(out_path) as img:
            assert img.mode == "L"
            assert img.size == (original.shape[2], original.shape[1])
            pixels = np.asarray(img)
        prob = trainer_mod.resize_hw(np.asarray(d_1, dtype=np.float64), original.shape[1:])
        assert np.array_equal(pixels, np.rint(255.0 * prob).astype(np.uint8))
        assert out_path.read_bytes() == (tmp_path / "out2" / entry["mask"]).read_bytes()


def test_predict_errors(tmp_path, source):
    checkpoint = OSADPython.Trainer(small_config(), source).checkpoint()
    support, annotation = _write_support(tmp_path)
    with pytest.raises(OSADPython.TrainerError):
        OSADPython.predict(checkpoint, support, annotation, [], tmp_path / "out")

    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    same = [tmp_path / "a" / "query.png", tmp_path / "b" / "query.png"]
    for path in same:
        Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(path)
    with pytest.raises(OSADPython.TrainerError, match="query"):
        OSADPython.predict(checkpoint, support, annotation, same, tmp_path / "out")
    assert not (tmp_path / "out").exists()

    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"human_box": [4, 8, 20]}))
    with pytest.raises(OSADPython.EpisodeError):
        trainer_mod.read_support(support, broken)


def test_augment():
    rng = np.random.default_rng(0)
    query = rng.uniform(size=(3, 32, 32)).astype(np.float32)
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[:, :8] = 1

    same_q, same_m = trainer_mod.augment([query], [mask], rng)
    assert np.array_equal(same_q[0], query)
    assert np.array_equal(same_m[0], mask)

    flipped = [trainer_mod.augment([query], [mask], np.random.default_rng(s), flip=True) for s in range(20)]
    for (q, m) in flipped:
        if np.array_equal(m[0], mask):
            assert np.array_equal(q[0], query)
        else:
            assert np.array_equal(m[0], mask[:, ::-1])
            assert np.array_equal(q[0], query[:, :, ::-1])

    cropped_q, cropped_m = trainer_mod.augment([query], [mask], rng, crop_size=24)
    assert cropped_q[0].shape == (3, 32, 32)
    assert set(np.unique(cropped_m[0])) <= {0, 1}


def _pool_loss_iou(trainer, pool):
    losses, ious = [], []
    with OSADPython.no_grad():
        for step in range(pool):
            episode = trainer.episode(step)
            output = trainer.network.forward(episode.support, episode.queries)
            losses.append(trainer.network.loss(output, episode.gt_masks).item())
            ious.extend(OSADPython.metrics.iou(stack.final.numpy()[0], mask)
                        for stack, mask in zip(output.predictions, episode.gt_masks))
    return float(np.mean(losses)), float(np.mean(ious))


@run_slow
def test_overfit_episode_pool(source):
    config = OSADPython.TrainConfig(steps=200, episode_pool=8, crop=False, flip=False, learning_rate=1e-3)
    trainer = OSADPython.Trainer(config, source)
    initial, _ = _pool_loss_iou(trainer, 8)
    assert np.isclose(initial, 5 * config.n_queries * np.log(2.0), rtol=1e-3)

    trainer.train()
    final, iou = _pool_loss_iou(trainer, 8)
    assert final < 0.15 * initial
    assert iou >= 0.85


@run_slow
def test_generalization(source):
    config = OSADPython.TrainConfig(steps=2000, eval_episodes=300)
    result = OSADPython.train(config, source)
    report = OSADPython.evaluate(result.checkpoint, source, n_episodes=300)
    baseline = OSADPython.evaluate_baseline(
        source,
        source.default_split(k=config.num_folds, seed=config.seed),
        fold=config.fold_id,
        config=config,
        n_episodes=300,
    )
    assert report.iou >= baseline.iou + 0.15
