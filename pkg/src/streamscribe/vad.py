"""Voice-activity detection used as the pre-transcription gate.

The reference implementation thresholds frame RMS energy; anything fancier
(neural VAD in an external backend) plugs in behind the same ``has_voice``
callable signature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import frame_rms


@dataclass(frozen=True)
class VadConfig:
    frame_ms: int = 30
    energy_threshold: float = 0.01
    min_voiced_frames: int = 3

    def __post_init__(self):
        if self.frame_ms <= 0:
            raise ValueError(f"frame_ms must be positive, got {self.frame_ms}")
        if not 0.0 < self.energy_threshold < 1.0:
            raise ValueError(
                f"energy_threshold must be in (0, 1), got {self.energy_threshold}"
            )
        if self.min_voiced_frames <= 0:
            raise ValueError(
                f"min_voiced_frames must be positive, got {self.min_voiced_frames}"
            )


def voiced_frame_count(samples: np.ndarray, sample_rate: int, config: VadConfig) -> int:
    """Number of complete frames whose RMS reaches the energy threshold.

    Trailing partial frames are ignored so that appending silence can never
    lower the count.
    """
    samples = np.asarray(samples)
    frame_len = max(1, int(round(sample_rate * config.frame_ms / 1000.0)))
    if samples.size < frame_len:
        return 0
    rms = frame_rms(samples, frame_len)
    return int(np.count_nonzero(rms >= config.energy_threshold))


def has_voice(samples: np.ndarray, sample_rate: int, config: VadConfig) -> bool:
    """True iff at least ``min_voiced_frames`` frames reach the RMS threshold.

    An empty waveform is silent by definition.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        return False
    return voiced_frame_count(samples, sample_rate, config) >= config.min_voiced_frames


class EnergyVad:
    """Deterministic energy-threshold VAD bound to a sample rate and config."""

    name = "energy"

    def __init__(self, sample_rate: int, config: VadConfig | None = None):
        self.sample_rate = sample_rate
        self.config = config or VadConfig()

    def has_voice(self, samples: np.ndarray) -> bool:
        return has_voice(samples, self.sample_rate, self.config)
