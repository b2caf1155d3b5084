"""Binaural speech enhancement toolkit."""

from ._core import (
    Enhancer,
    better_ear_stoi,
    fw_segsnr,
    istft,
    stft,
    stoi,
    synth_utterance,
)

__all__ = [
    "Enhancer",
    "better_ear_stoi",
    "fw_segsnr",
    "istft",
    "stft",
    "stoi",
    "synth_utterance",
]
