/**
 * whisper.cpp engine: shells out to a whisper-cli binary per request.
 *
 * Needs a GGML model file (see backend/README.md for download pointers);
 * the binary and model paths come from --whisper-bin / --model-path or the
 * WHISPER_CPP_BIN / WHISPER_CPP_MODEL environment variables. whisper.cpp
 * runs its own VAD-informed decoding; vad_enabled=false adds --no-fallback
 * style greedy settings only.
 */

import { execFile } from 'child_process';
import { mkdtempSync, rmSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';

import { Engine, EngineConfig, EngineRequest, EngineResult } from './engine';
import { Segment } from './protocol';

function toWav(samples: Float32Array, sampleRate: number): Buffer {
  const pcm = Buffer.alloc(samples.length * 2);
  for (let i = 0; i < samples.length; i++) {
    const v = Math.max(-1, Math.min(1, samples[i]));
    pcm.writeInt16LE(Math.max(-32768, Math.min(32767, Math.round(v * 32768))), i * 2);
  }
  const header = Buffer.alloc(44);
  header.write('RIFF', 0);
  header.writeUInt32LE(36 + pcm.length, 4);
  header.write('WAVE', 8);
  header.write('fmt ', 12);
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(1, 20); // PCM
  header.writeUInt16LE(1, 22); // mono
  header.writeUInt32LE(sampleRate, 24);
  header.writeUInt32LE(sampleRate * 2, 28);
  header.writeUInt16LE(2, 32);
  header.writeUInt16LE(16, 34);
  header.write('data', 36);
  header.writeUInt32LE(pcm.length, 40);
  return Buffer.concat([header, pcm]);
}

export class WhisperCppEngine implements Engine {
  readonly name: string;

  constructor(private readonly config: EngineConfig) {
    if (!config.modelPath) {
      throw new Error(
        'whisper-cpp engine needs a model file: pass --model-path or set WHISPER_CPP_MODEL',
      );
    }
    this.name = `whisper-cpp-${config.modelSize}`;
  }

  async transcribe(request: EngineRequest): Promise<EngineResult> {
    if (request.samples.length === 0) {
      return { text: '', segments: [] };
    }
    const dir = mkdtempSync(join(tmpdir(), 'whisper-req-'));
    const wavPath = join(dir, 'audio.wav');
    writeFileSync(wavPath, toWav(request.samples, request.sampleRate));
    try {
      const args = [
        '--model', this.config.modelPath as string,
        '--output-json', '--output-file', join(dir, 'out'),
        '--no-prints',
        '--temperature', '0', '--beam-size', '1', // deterministic decode
        ...(request.language ? ['--language', request.language] : []),
        wavPath,
      ];
      await new Promise<void>((resolve, reject) => {
        execFile(this.config.whisperBin, args, { timeout: 120_000 }, (err) =>
          err ? reject(err) : resolve(),
        );
      });
      const parsed = require(join(dir, 'out.json'));
      const segments: Segment[] = (parsed.transcription ?? []).map(
        (s: { offsets: { from: number; to: number }; text: string }): Segment => [
          s.offsets.from / 1000,
          s.offsets.to / 1000,
          s.text.trim(),
        ],
      );
      const text = segments.map(([, , t]) => t).join(' ').trim();
      return { text, segments };
    } finally {
      rmSync(dir, { recursive: true, force: true });
    }
  }
}
