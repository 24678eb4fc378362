import numpy as np
import pytest

import drconv.train.loop as loop
from drconv.errors import DivergenceError
from drconv.train.config import ModelConfig, TrainConfig
from drconv.train.data import Dataset, synth_region_dataset
from drconv.train.loop import MetricsLog, build_network, evaluate, train

SMALL_DRCONV = {"input_hw": [8, 8], "classes": 2,
                "layers": [{"k": 3, "out_channels": 3},
                           {"kind": "drconv", "k": 1, "out_channels": 4, "m": 2}]}


@pytest.fixture
def tiny_data():
    return synth_region_dataset(24, 8, 8, 2, seed=3).split(16)


class ConstantPredictor:
    def __init__(self, label):
        self.label = label

    def predict(self, x):
        return np.full(len(x), self.label)


class OraclePredictor:
    def __init__(self, data):
        self.lookup = {x.tobytes(): y for x, y in zip(data.images, data.labels)}

    def predict(self, x):
        return np.array([self.lookup[v.tobytes()] for v in x])


def test_evaluate_perfect_and_constant(tiny_data):
    train_set, _ = tiny_data
    assert evaluate(OraclePredictor(train_set), train_set, batch_size=5) == 1.0
    balanced = synth_region_dataset(10, 8, 8, 2, seed=0)
    assert evaluate(ConstantPredictor(0), balanced) == 0.5


def test_threaded_evaluation_matches_sequential(tiny_data):
    net = build_network(ModelConfig.from_dict(SMALL_DRCONV), 0)
    _, val = tiny_data
    assert evaluate(net, val, batch_size=3, threads=3) == evaluate(net, val, batch_size=3)


def test_training_log_is_deterministic(tmp_path, tiny_data):
    config = ModelConfig.from_dict(SMALL_DRCONV)
    cfg = TrainConfig(epochs=2, batch_size=8, seed=11)
    paths = [tmp_path / "a.log", tmp_path / "b.log"]
    for path in paths:
        train(config, tiny_data[0], cfg, tiny_data[1], MetricsLog(path))
    text = paths[0].read_text()
    assert text == paths[1].read_text()
    lines = text.splitlines()
    assert lines[0].startswith("event=start")
    assert "threads=1" in lines[0] and "seed=11" in lines[0]
    assert lines[-1].startswith("event=end")
    assert sum(line.startswith("event=epoch") for line in lines) == 2


def test_epoch_records(tiny_data):
    log = MetricsLog()
    result = train(ModelConfig.from_dict(SMALL_DRCONV), tiny_data[0], TrainConfig(epochs=1, batch_size=8),
                   tiny_data[1], log)
    record = result.history[0]
    for key in ("loss", "train_acc", "val_acc", "lr", "grad_norm.layer0", "grad_norm.layer1",
                "grad_norm.layer1.guide", "grad_norm.head", "regions_active.layer1"):
        assert key in record, key
    assert record["grad_norm.layer1.guide"] > 0
    assert 1.0 <= record["regions_active.layer1"] <= 2.0
    assert 0.0 <= record["val_acc"] <= 1.0


def test_metrics_line_format():
    line = MetricsLog().write("epoch", b=0.5, a=2, flag=True)
    assert line == "event=epoch a=2 b=0.5 flag=true"


def test_memorizes_single_sample():
    data = synth_region_dataset(1, 8, 8, 2, seed=4)
    config = ModelConfig.from_dict({"input_hw": [8, 8], "classes": 2, "head_width": 8,
                                    "layers": [{"k": 3, "out_channels": 4}]})
    cfg = TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0, batch_size=1, epochs=200, seed=0)
    result = train(config, data, cfg)
    assert result.history[-1]["loss"] < 0.01


def test_divergence_restores_last_good(monkeypatch, tiny_data):
    calls = {"n": 0}
    real = loop.cross_entropy

    def flaky(logits, labels):
        calls["n"] += 1
        loss, grad = real(logits, labels)
        return (float("nan") if calls["n"] == 4 else loss), grad

    monkeypatch.setattr(loop, "cross_entropy", flaky)
    config = ModelConfig.from_dict(SMALL_DRCONV)
    net = build_network(config, 0)
    cfg = TrainConfig(epochs=3, batch_size=8)
    with pytest.raises(DivergenceError) as excinfo:
        train(config, tiny_data[0], cfg, None, None, net)
    assert excinfo.value.epoch == 2
    for key, value in net.parameters().items():
        np.testing.assert_array_equal(value, excinfo.value.last_good[key])


def test_exploding_weights_raise_divergence(tiny_data):
    config = ModelConfig.from_dict(SMALL_DRCONV)
    net = build_network(config, 0)
    metrics = MetricsLog()
    with pytest.raises(DivergenceError) as excinfo:
        train(config, tiny_data[0], TrainConfig(epochs=3, batch_size=8, lr=1e200), None, metrics, net)
    assert metrics.records[-1]["event"] == "diverged"
    assert metrics.records[-1]["epoch"] == excinfo.value.epoch
    for key, value in net.parameters().items():
        assert np.all(np.isfinite(value)), key
        np.testing.assert_array_equal(value, excinfo.value.last_good[key])


def test_dataset_rejects_out_of_range_labels():
    with pytest.raises(Exception):
        Dataset(np.zeros((2, 2, 2, 1)), np.array([0, 3]), 2)
