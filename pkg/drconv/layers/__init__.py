from .base import Layer, LayerContext
from .drconv import DRConvGrads, DRConvLayer, drconv_backward, drconv_forward
from .local import LocalConvLayer
from .standard import StandardConvLayer

LAYER_TYPES = {cls.kind: cls for cls in (StandardConvLayer, LocalConvLayer, DRConvLayer)}
