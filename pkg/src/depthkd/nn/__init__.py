from .attention import TransformerBlock, from_tokens, to_tokens
from .lam import Lam
from .layers import BatchNorm2d, Conv2d, ConvBnRelu, LayerNorm, Linear
from .lgconv import DEFAULT_GAMMA0, LgConv, wrap_backbone_with_lgconv
from .module import Module, Parameter, ParameterStore, checksum, module_checksum
