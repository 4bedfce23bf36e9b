"""Audio-visual speech recognition with a tubelet-transformer video front-end.

A from-scratch float64 pipeline: reverse-mode autodiff core, log-mel audio
features, two video front-ends (tubelet transformer and (2+1)D VGG), windowed
transformer/conformer encoders, and an RNN-T decoder, trainable end-to-end on
a synthetic A/V task.
"""

from .audio import AudioFeatures, Waveform, extract_features, log_mel, read_wav, stack3, write_wav
from .augment import MtrConfig, mix_at_snr, mtr_sample, overlap_mix, synth_babble
from .config import DataConfig, RunConfig, desk_run_config, paper_run_config
from .encoder import ConformerEncoder, EncoderConfig, TransformerEncoder, fuse, local_attention_mask
from .flops import bench_latency, count_flops
from .frontends import Vgg21d, Vgg21dConfig, VitFrontEnd, VitFrontEndConfig
from .layers import count_params
from .model import AvTransducer
from .optim import Adam, LrSchedule, lr_conformer, lr_finetune, lr_transformer
from .synth import SyntheticAvExample, gen_synthetic, rule_based_decode
from .tensor import Tape, Tensor, grad_check
from .train import evaluate, train
from .transducer import (
    DecoderConfig,
    JointNet,
    PredictionNet,
    greedy_decode,
    rnnt_loss,
    rnnt_loss_bruteforce,
    wer,
)
from .video import TubeletBatch, TubeletConfig, VideoClip, extract_tubelets, resample_nearest

__version__ = "0.1.0"
