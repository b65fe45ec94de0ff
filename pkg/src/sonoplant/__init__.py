"""Simulation toolkit for enrollment-stage ultrasonic voiceprint backdoors."""

from .audio import AudioClip, resample
from .dsp import (ChannelConfig, ResponseTable, TriggerParams, attenuate,
                  attenuation_factor, capture_baseband, mix,
                  nonlinear_demodulate, precompensate, rir_convolve,
                  shift_place, simulate_capture, ssb_modulate, synthesize_trigger,
                  synthetic_rir)
from .evaldef import (DefenseSpec, EvalConfig, apply_defense,
                      calibrate_threshold, decide, evaluate, liprad_features,
                      parse_defense)
from .features import FeatureConfig, FeatureFrameSet, mfcc_features
from .forge import (AugmentSpace, LossWeights, OptimConfig, adam_step,
                    count_active, init_trigger, loss_eval, nes_gradient,
                    optimize, prune_sparsify)
from .kernels import BACKEND as KERNEL_BACKEND
from .oracle import ScorerHandle, Voiceprint, cosine_score, embed, enroll
from .wavio import read_wav, write_wav

__version__ = "0.1.0"
