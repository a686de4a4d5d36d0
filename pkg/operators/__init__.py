from .encoding import NO_SPIKE, EncodingConfig, SpikeRaster, decode_raster, encode_image, make_raster
from .dynamics import NeuronParams, first_spike_time, membrane_potential, psp_kernel, psp_slope_wrt_presyn_time
from .layers import Layer, LayerSpec, LayerState, Network, classify, network_forward
from .learning import LearningConfig, OutputTargetRule, TargetTimes, train_batch, train_step
from .binary import BinaryLayerState, binarize, binary_train_step, footprint
