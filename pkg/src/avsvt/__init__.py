"""Audio-visual singing voice transcription at desk scale.

Modules: ``notation`` (pitch classes, note sequences, label files),
``labeling`` (frame targets, segmentation, batching), ``decoder``,
``metrics``, ``modeling``, ``training``, ``signals`` (noise and synthetic
songs), ``data``, ``experiment`` and ``cli``.
"""

from .decoder import DecoderConfig, FrameLogits, decode
from .labeling import events_to_frames
from .metrics import TOLERANCE_PRESETS, ToleranceProfile, aggregate, evaluate
from .modeling import ModelConfig, build_audio_model, build_av_model, build_video_model, svt_loss
from .notation import SILENCE, FrameGrid, NoteEvent, NoteSequence, classes_to_midi, midi_to_classes
from .training import TrainSchedule, lp_ft_train, newbob_update, train_av

__version__ = "0.1.0"

__all__ = [
    "SILENCE",
    "TOLERANCE_PRESETS",
    "DecoderConfig",
    "FrameGrid",
    "FrameLogits",
    "ModelConfig",
    "NoteEvent",
    "NoteSequence",
    "ToleranceProfile",
    "TrainSchedule",
    "aggregate",
    "build_audio_model",
    "build_av_model",
    "build_video_model",
    "classes_to_midi",
    "decode",
    "evaluate",
    "events_to_frames",
    "lp_ft_train",
    "midi_to_classes",
    "newbob_update",
    "svt_loss",
    "train_av",
]
