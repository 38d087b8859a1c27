from .acclimation import AcclimatedOutput, AcclimatedTeacher, Adapter
from .bins import bins_from_logits, depth_from_bins
from .config import ModelConfig
from .networks import (
    STRIDES, BinPrediction, CnnEncoder, DepthDecoder, ModelOutput, StudentModel, TeacherModel,
    TransformerEncoder, pyramid_shapes,
)
