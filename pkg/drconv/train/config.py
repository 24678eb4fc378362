"""Run configuration: model stack, optimizer schedule and data source.

A run config is a JSON object with ``model``, ``train`` and ``data`` sections
whose keys are the parameter names declared below. Every failure is reported
as a :class:`~drconv.errors.ConfigError` naming the dotted field.
"""
import json
from pathlib import Path
from typing import NamedTuple

import param

from ..conv import PADDING_MODES
from ..errors import ConfigError

LAYER_KINDS = ["standard", "drconv", "local"]


class _Section(param.Parameterized):

    _section = None

    @classmethod
    def from_dict(cls, values, section=None):
        section = section or cls._section
        if not isinstance(values, dict):
            raise ConfigError(section, f"expected an object, got {type(values).__name__}")
        obj = cls()
        for key, value in values.items():
            if key == "name" or key not in obj.param:
                raise ConfigError(f"{section}.{key}", "unknown field")
            try:
                setattr(obj, key, value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}.{key}", str(exc)) from exc
        obj.validate(section)
        return obj

    def to_dict(self):
        return {key: getattr(self, key) for key in self.param if key != "name"}

    def validate(self, section):
        pass


class LayerConfig(_Section):

    _section = "model.layers"

    kind = param.ObjectSelector(default="standard", objects=LAYER_KINDS)

    k = param.Integer(default=3, bounds=(1, None))

    out_channels = param.Integer(default=8, bounds=(1, None))

    stride = param.Integer(default=1, bounds=(1, None))

    padding = param.ObjectSelector(default="same_zero", objects=PADDING_MODES)

    m = param.Integer(default=4, bounds=(1, None), doc="Region count (drconv only).")

    hidden = param.Integer(default=None, allow_None=True, bounds=(1, None),
                           doc="Generator hidden width; m * in_channels when unset.")

    def validate(self, section):
        if self.k % 2 == 0:
            raise ConfigError(f"{section}.k", f"kernel size must be odd, got {self.k}")
        if self.kind == "drconv" and self.hidden is not None and self.hidden % self.m:
            raise ConfigError(f"{section}.hidden", f"{self.hidden} is not divisible by m={self.m}")


class ModelConfig(_Section):

    _section = "model"

    in_channels = param.Integer(default=1, bounds=(1, None))

    input_hw = param.List(default=[24, 24], doc="Input height and width.")

    layers = param.List(default=[], doc="Convolution stack, one LayerConfig per entry.")

    pool_after = param.List(default=[], doc="Indices of layers followed by 2x2 average pooling.")

    head_width = param.Integer(default=0, bounds=(0, None),
                               doc="Width of an extra ReLU dense layer before the classifier; 0 disables it.")

    classes = param.Integer(default=4, bounds=(2, None))

    width_multiplier = param.Number(default=1.0, bounds=(0, None), inclusive_bounds=(False, True))

    @classmethod
    def from_dict(cls, values, section="model"):
        values = dict(values)
        layers = values.get("layers", [])
        if not isinstance(layers, list):
            raise ConfigError(f"{section}.layers", "expected a list")
        values["layers"] = [layer if isinstance(layer, LayerConfig)
                            else LayerConfig.from_dict(layer, f"{section}.layers[{i}]")
                            for i, layer in enumerate(layers)]
        return super().from_dict(values, section)

    def to_dict(self):
        out = super().to_dict()
        out["layers"] = [layer.to_dict() for layer in self.layers]
        return out

    def channels(self):
        """``(in, out)`` channel pair of every layer after the width multiplier."""
        pairs, c = [], self.in_channels
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            out = layer.out_channels if last else max(1, round(layer.out_channels * self.width_multiplier))
            pairs.append((c, out))
            c = out
        return pairs

    def validate(self, section):
        if len(self.input_hw) != 2 or any(not isinstance(d, int) or d < 1 for d in self.input_hw):
            raise ConfigError(f"{section}.input_hw", f"expected [height, width], got {self.input_hw}")
        if not self.layers:
            raise ConfigError(f"{section}.layers", "at least one layer is required")
        for i in self.pool_after:
            if not isinstance(i, int) or not 0 <= i < len(self.layers):
                raise ConfigError(f"{section}.pool_after", f"no layer with index {i}")
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, LayerConfig):
                raise ConfigError(f"{section}.layers[{i}]", "expected a layer object")


class TrainConfig(_Section):

    _section = "train"

    lr = param.Number(default=0.05, bounds=(0, None), inclusive_bounds=(False, True),
                      doc="Initial learning rate; decays linearly to 0 over the run.")

    momentum = param.Number(default=0.9, bounds=(0, 1), inclusive_bounds=(True, False))

    weight_decay = param.Number(default=4e-5, bounds=(0, None),
                                doc="Not applied to biases or to the guide convolution.")

    batch_size = param.Integer(default=32, bounds=(1, None))

    epochs = param.Integer(default=20, bounds=(1, None))

    seed = param.Integer(default=0)

    threads = param.Integer(default=1, bounds=(1, None), doc="Evaluation worker threads.")


class DataConfig(_Section):

    _section = "data"

    kind = param.ObjectSelector(default="synth", objects=["synth", "idx"])

    n_train = param.Integer(default=4000, bounds=(1, None))

    n_val = param.Integer(default=1000, bounds=(0, None))

    height = param.Integer(default=24, bounds=(1, None))

    width = param.Integer(default=24, bounds=(1, None))

    classes = param.Integer(default=4, bounds=(2, None))

    seed = param.Integer(default=0)

    images = param.String(default=None, allow_None=True)

    labels = param.String(default=None, allow_None=True)

    val_fraction = param.Number(default=0.2, bounds=(0, 1), inclusive_bounds=(True, False))

    def validate(self, section):
        if self.kind == "idx":
            for key in ("images", "labels"):
                path = getattr(self, key)
                if path is None:
                    raise ConfigError(f"{section}.{key}", "required for idx data")
                if not Path(path).is_file():
                    raise ConfigError(f"{section}.{key}", f"no such file: {path}")


class RunConfig(NamedTuple):
    model: ModelConfig
    train: TrainConfig
    data: DataConfig

    def to_dict(self):
        return {"model": self.model.to_dict(), "train": self.train.to_dict(), "data": self.data.to_dict()}


def parse_run_config(values):
    unknown = set(values) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    if "model" not in values:
        raise ConfigError("model", "missing section")
    return RunConfig(ModelConfig.from_dict(values["model"]),
                     TrainConfig.from_dict(values.get("train", {})),
                     DataConfig.from_dict(values.get("data", {})))


def load_run_config(path):
    path = Path(path)
    try:
        values = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError("config", "top level must be an object")
    return parse_run_config(values)


def parse_data_arg(arg, base=None):
    """``synth`` or ``idx:IMAGES,LABELS`` on top of an existing data section."""
    values = base.to_dict() if base is not None else {}
    if arg == "synth":
        values.update(kind="synth")
    elif arg.startswith("idx:"):
        images, _, labels = arg[4:].partition(",")
        values.update(kind="idx", images=images or None, labels=labels or None)
    else:
        raise ConfigError("data", f"expected 'synth' or 'idx:IMAGES,LABELS', got {arg!r}")
    return DataConfig.from_dict(values)
