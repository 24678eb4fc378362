"""Full-size training runs on the synthetic region task (``--runslow``)."""
import json
from pathlib import Path

import numpy as np
import pytest

from drconv.train.config import ModelConfig, TrainConfig, load_run_config
from drconv.train.data import load_dataset, synth_region_dataset
from drconv.train.loop import evaluate, train
from drconv.train.network import Network, cross_entropy
from drconv.train.optim import SGD
from drconv.viz import permutation_null, region_agreement

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)

pytestmark = pytest.mark.slow


def _param_count(model_config):
    return sum(v.size for v in Network.build(model_config, 0).parameters().values())


@pytest.fixture(scope="module")
def task():
    return load_dataset(load_run_config(CONFIGS / "drconv_synth.json").data)


@pytest.fixture(scope="module")
def paired_runs(task):
    runs = {}
    for name in ("drconv_synth", "standard_synth"):
        run = load_run_config(CONFIGS / f"{name}.json")
        runs[name] = []
        for seed in SEEDS:
            run.train.seed = seed
            result = train(run.model, task[0], run.train, task[1])
            runs[name].append((result, evaluate(result.network, task[1])))
    return runs


def test_paired_models_are_parameter_matched():
    a = _param_count(load_run_config(CONFIGS / "drconv_synth.json").model)
    b = _param_count(load_run_config(CONFIGS / "standard_synth.json").model)
    assert abs(a - b) / a < 0.02


def test_both_models_converge(paired_runs):
    for runs in paired_runs.values():
        for result, _ in runs:
            assert result.history[-1]["loss"] < 0.5


def test_drconv_is_not_worse_than_standard(paired_runs):
    drconv = np.mean([acc for _, acc in paired_runs["drconv_synth"]])
    standard = np.mean([acc for _, acc in paired_runs["standard_synth"]])
    print(json.dumps({"drconv_val_acc": drconv, "standard_val_acc": standard}))
    assert drconv >= standard - 0.01


def test_guide_gradients_flow(paired_runs):
    for result, _ in paired_runs["drconv_synth"]:
        for record in result.history[1:]:
            guides = [v for k, v in record.items() if k.startswith("grad_norm.") and k.endswith(".guide")]
            assert guides and all(v > 0 for v in guides)


def test_learned_masks_follow_texture_regions(paired_runs, task):
    network = paired_runs["drconv_synth"][0][0].network
    val = task[1].subset(slice(0, 200))
    masks = network.guided_masks(val.images, "layer1")
    observed = region_agreement(masks, val.regions)
    null = permutation_null(masks, val.regions, trials=200, seed=0)
    assert observed > np.percentile(null, 95)


def _linear_accuracy(train_set, val, epochs=20, lr=0.05):
    flat = train_set.images.reshape(len(train_set), -1)
    weights = {"w": np.zeros((flat.shape[1], train_set.classes)), "b": np.zeros(train_set.classes)}
    opt = SGD(weights, momentum=0.9)
    rng = np.random.default_rng(0)
    for _ in range(epochs):
        order = rng.permutation(len(flat))
        for start in range(0, len(flat), 32):
            idx = order[start:start + 32]
            _, d = cross_entropy(flat[idx] @ weights["w"] + weights["b"], train_set.labels[idx])
            opt.step({"w": flat[idx].T @ d, "b": d.sum(axis=0)}, lr)
    logits = val.images.reshape(len(val), -1) @ weights["w"] + weights["b"]
    return float(np.mean(np.argmax(logits, axis=1) == val.labels))


def test_task_needs_convolution():
    data = synth_region_dataset(3000, 24, 24, 4, seed=0)
    train_set, val = data.split(2400)
    assert _linear_accuracy(train_set, val) < 0.7
    model = ModelConfig.from_dict({"input_hw": [24, 24], "classes": 4, "pool_after": [0],
                                   "layers": [{"k": 3, "out_channels": 16}, {"k": 3, "out_channels": 32}]})
    result = train(model, train_set, TrainConfig(epochs=20, seed=0), val)
    assert result.history[-1]["val_acc"] > 0.9
