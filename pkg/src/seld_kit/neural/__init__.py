from .layers import (LSTM, Conv2D, Layer, MaxPool2D, MaxPoolOverTime, ReshapeMergeFreqChannels, ShapeError,
                     TimeDistributedDense, layer_from_config)
from .model import (FLAT_ARCH, STAGE1_ARCH, STAGE2_ARCH, LossReport, ModelGraph, backward, bce_loss, binarize,
                    count_parameters, crnn_architecture, forward)
