"""Attentional recurrent saliency network in numpy.

A from-scratch reverse-mode autograd core, the self-attention and recurrent
convolutional modules, a VGG-style backbone with an attentional decoder,
synthetic data, Adam training, checkpoints and saliency metrics.
"""

from .attention import SelfAttention, attention_forward, attention_map
from .autograd import Parameter, Tensor, backward, no_grad
from .numgrad import gradcheck
from .metrics import EvalReport, evaluate_set, f_measure, mae, pr_at_threshold
from .network import NetConfig, SaliencyModel
from .rcl import RclUnit, rcl_forward
from .trainer import TrainConfig, adam_step, bce_loss, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
