from .conv import ConvSpec, FilterBank, LocalFilterField, StandardFilter
from .cost import LayerCost, count_layer_cost
from .errors import DRConvError
from .generator import GeneratorParams, generate_filters
from .layers import DRConvLayer, LocalConvLayer, StandardConvLayer, drconv_backward, drconv_forward
from .verify import GradCheckReport, check_drconv_gradients, relaxed_forward

__version__ = "0.1.0"
