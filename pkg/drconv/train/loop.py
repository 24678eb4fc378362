"""Training and evaluation loops and the key=value metrics log."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, NamedTuple

import numpy as np

from ..errors import ConfigError, DivergenceError, NonFiniteError
from .network import Network, cross_entropy
from .optim import SGD, linear_decay

log = logging.getLogger(__name__)

MASK_SAMPLES = 100


def _format_value(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.8g}"
    return str(value)


class MetricsLog:
    """Append-only log of ``event=<name> key=value ...`` lines, keys sorted.

    With no path the records are only kept in memory.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records = []

    def write(self, event, **values):
        self.records.append(dict(event=event, **values))
        line = " ".join([f"event={event}"] + [f"{key}={_format_value(values[key])}" for key in sorted(values)])
        if self.path is not None:
            with self.path.open("a") as f:
                f.write(line + "\n")
        log.debug(line)
        return line


class TrainResult(NamedTuple):
    network: Network
    history: List[dict]


def _batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def predict(network, images, batch_size=100, threads=1):
    """Predicted labels; with ``threads > 1`` batches run on a thread pool."""
    chunks = [images[s] for s in _batches(len(images), batch_size)]
    if not chunks:
        return np.zeros(0, dtype=np.int64)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(network.predict, chunks))
    else:
        parts = [network.predict(chunk) for chunk in chunks]
    return np.concatenate(parts)


def evaluate(network, data, batch_size=100, threads=1):
    """Top-1 accuracy of ``network`` on ``data``, in ``[0, 1]``."""
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(network, data.images, batch_size, threads) == data.labels))


def regions_active(network, images):
    """Mean number of occupied regions per sample for every DRConv layer."""
    out = {}
    for layer in network.drconv_layers():
        masks = network.guided_masks(images, layer.name)
        out[layer.name] = float(np.mean([len(np.unique(mask)) for mask in masks]))
    return out


def check_data_fits(model_config, data):
    """Raise :class:`ConfigError` naming the model field that ``data`` contradicts."""
    _, h, w, c = data.images.shape
    if c != model_config.in_channels:
        raise ConfigError("model.in_channels", f"{model_config.in_channels}, but the data has {c} channels")
    if data.classes > model_config.classes:
        raise ConfigError("model.classes", f"{model_config.classes}, but the data has {data.classes} classes")
    has_local = any(layer.kind == "local" for layer in model_config.layers)
    if has_local and [h, w] != list(model_config.input_hw):
        raise ConfigError("model.input_hw", f"{list(model_config.input_hw)} is fixed by the local layers, "
                                            f"but the data is {h}x{w}")


def build_network(model_config, seed):
    """Network initialized from the first stream of ``seed``; the second orders the data."""
    init_seq, _ = np.random.SeedSequence(seed).spawn(2)
    return Network.build(model_config, np.random.default_rng(init_seq))


def _layer_of(key):
    return key.rsplit(".", 1)[0]


def _step_gradients(network, x, y):
    """Logits, loss and gradients of one batch; raises :class:`NonFiniteError`
    when an activation, the loss or a gradient is NaN or infinite."""
    with np.errstate(over="ignore", invalid="ignore"):
        logits, cache = network.forward(x)
        loss, dlogits = cross_entropy(logits, y)
        if not math.isfinite(loss):
            raise NonFiniteError(f"loss became {loss}")
        grads = network.backward(cache, dlogits)
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of {key} holds non-finite values")
    return logits, loss, grads


def _diverged(network, last_good, metrics, exc, epoch, step):
    network.load_state(last_good)
    metrics.write("diverged", epoch=epoch, step=step)
    return DivergenceError(f"{exc} at epoch {epoch}, step {step}", last_good=last_good, epoch=epoch)


def train(model_config, data, cfg, val=None, log_to=None, network=None):
    """Train with SGD + momentum and a linear-to-zero learning rate.

    Writes one ``start`` record, one ``epoch`` record per epoch (loss,
    running train accuracy, validation accuracy, lr, mean gradient norm per
    layer and per guide convolution, region occupancy) and one ``end``
    record. When an activation, the loss or a gradient turns non-finite the
    parameters are restored to the last completed epoch and
    :class:`DivergenceError` is raised.
    """
    for part in (data, val):
        if part is not None:
            check_data_fits(model_config, part)
    metrics = log_to if log_to is not None else MetricsLog()
    _, order_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if network is None:
        network = build_network(model_config, cfg.seed)
    order_rng = np.random.default_rng(order_seq)
    params = network.parameters()
    optimizer = SGD(params, cfg.momentum, cfg.weight_decay, network.decay_flags())
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    metrics.write("start", seed=cfg.seed, threads=cfg.threads, n_train=n,
                  n_val=0 if val is None else len(val), params=sum(p.size for p in params.values()))
    last_good = network.state()
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        norms = {}
        for batch in _batches(n, cfg.batch_size):
            idx = order[batch]
            x, y = data.images[idx], data.labels[idx]
            try:
                logits, loss, grads = _step_gradients(network, x, y)
            except NonFiniteError as exc:
                raise _diverged(network, last_good, metrics, exc, epoch, step) from exc
            layer_sq = {}
            for key, g in grads.items():
                sq = float(np.sum(g * g))
                layer_sq[_layer_of(key)] = layer_sq.get(_layer_of(key), 0.0) + sq
                if key.endswith(".guide"):
                    layer_sq[key] = sq
            for key, sq in layer_sq.items():
                norms[key] = norms.get(key, 0.0) + math.sqrt(sq)
            lr = linear_decay(cfg.lr, step, total_steps)
            optimizer.step(grads, lr)
            network.mark_updated()
            step += 1
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        record = {"epoch": epoch, "loss": loss_sum / n, "train_acc": correct / n,
                  "lr": linear_decay(cfg.lr, step, total_steps)}
        record.update({f"grad_norm.{key}": value / steps_per_epoch for key, value in norms.items()})
        if val is not None and len(val):
            try:
                record["val_acc"] = evaluate(network, val, threads=cfg.threads)
                active = regions_active(network, val.images[:MASK_SAMPLES])
            except NonFiniteError as exc:
                raise _diverged(network, last_good, metrics, exc, epoch, step) from exc
            for name, count in active.items():
                record[f"regions_active.{name}"] = count
        metrics.write("epoch", **record)
        log.info("epoch %d loss=%.4f train_acc=%.3f val_acc=%s", epoch, record["loss"],
                 record["train_acc"], record.get("val_acc", "-"))
        history.append(record)
        last_good = network.state()
    metrics.write("end", epochs=cfg.epochs, steps=step)
    return TrainResult(network, history)
