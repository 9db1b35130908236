/**
 * Transcription engines behind the stdio protocol.
 *
 * `stub` is a deterministic engine for protocol conformance tests: an
 * energy VAD gates silence and a periodicity check rejects pure tones, so
 * only "speech-like" audio yields text. `whisper-cpp` shells out to a
 * whisper.cpp CLI with a real model; see backend/README.md.
 */

import { Segment } from './protocol';

export const MODEL_SIZES = ['base', 'small', 'medium', 'large-v3'] as const;
export type ModelSize = (typeof MODEL_SIZES)[number];

export interface EngineRequest {
  samples: Float32Array;
  sampleRate: number;
  language: string | null;
  vadEnabled: boolean;
  options: Record<string, unknown>;
}

export interface EngineResult {
  text: string;
  segments: Segment[];
}

export interface Engine {
  readonly name: string;
  transcribe(request: EngineRequest): Promise<EngineResult>;
}

export interface EngineConfig {
  modelSize: ModelSize;
  language: string | null;
  whisperBin: string;
  modelPath: string | null;
}

// ---------------------------------------------------------------------------
// stub engine
// ---------------------------------------------------------------------------

const FRAME_MS = 30;
const ENERGY_THRESHOLD = 0.01;
const MIN_VOICED_FRAMES = 3;
// zero-crossing spacing regularity below this marks a pure tone
const TONE_CV_THRESHOLD = 0.15;

function voicedFrameCount(samples: Float32Array, sampleRate: number): number {
  const frameLen = Math.max(1, Math.round((sampleRate * FRAME_MS) / 1000));
  const frames = Math.floor(samples.length / frameLen);
  let voiced = 0;
  for (let f = 0; f < frames; f++) {
    let acc = 0;
    for (let i = f * frameLen; i < (f + 1) * frameLen; i++) {
      acc += samples[i] * samples[i];
    }
    if (Math.sqrt(acc / frameLen) >= ENERGY_THRESHOLD) {
      voiced++;
    }
  }
  return voiced;
}

/** Coefficient of variation of zero-crossing spacing; ~0 for pure tones. */
function crossingSpacingCv(samples: Float32Array): number {
  const spacings: number[] = [];
  let last = -1;
  for (let i = 1; i < samples.length; i++) {
    if ((samples[i - 1] < 0 && samples[i] >= 0) || (samples[i - 1] >= 0 && samples[i] < 0)) {
      if (last >= 0) {
        spacings.push(i - last);
      }
      last = i;
    }
  }
  if (spacings.length < 8) {
    return Infinity;
  }
  const mean = spacings.reduce((a, b) => a + b, 0) / spacings.length;
  const variance = spacings.reduce((a, b) => a + (b - mean) ** 2, 0) / spacings.length;
  return Math.sqrt(variance) / mean;
}

export class StubEngine implements Engine {
  readonly name: string;

  constructor(private readonly config: EngineConfig) {
    this.name = `stub-${config.modelSize}`;
  }

  async transcribe(request: EngineRequest): Promise<EngineResult> {
    if ((request.options as { force_error?: unknown }).force_error) {
      throw new Error('forced error for testing');
    }
    const { samples, sampleRate } = request;
    if (samples.length === 0) {
      return { text: '', segments: [] };
    }
    const voiced = voicedFrameCount(samples, sampleRate);
    if (voiced < MIN_VOICED_FRAMES) {
      return { text: '', segments: [] };
    }
    if (request.vadEnabled && crossingSpacingCv(samples) < TONE_CV_THRESHOLD) {
      // energetic but perfectly periodic: a tone, not speech
      return { text: '', segments: [] };
    }
    const duration = samples.length / sampleRate;
    const text = `stub transcript ${voiced} voiced frames ${duration.toFixed(2)}s`;
    return { text, segments: [[0, duration, text]] };
  }
}
