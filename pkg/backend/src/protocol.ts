/**
 * Wire protocol types and helpers (newline-delimited JSON on stdio).
 *
 * request  {"id":N,"sample_rate":16000,"audio":"<b64 pcm16le>","language":"en",
 *           "vad_enabled":true,"backend_options":{...}}
 * response {"id":N,"text":"...","segments":[[s,e,"..."],...],"model_time":T}
 * error    {"id":N,"error":"message"}
 * handshake (first line printed): {"ready":true,"backend":"<name>"}
 */

export interface TranscribeRequest {
  id: number;
  sample_rate: number;
  audio: string;
  language?: string | null;
  vad_enabled?: boolean;
  backend_options?: Record<string, unknown>;
}

export type Segment = [number, number, string];

export interface TranscribeResponse {
  id: number;
  text: string;
  segments: Segment[];
  model_time: number;
}

export class ProtocolError extends Error {
  constructor(message: string, public readonly requestId: number = -1) {
    super(message);
  }
}

export function parseRequest(line: string): TranscribeRequest {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new ProtocolError('malformed request line');
  }
  if (typeof parsed !== 'object' || parsed === null) {
    throw new ProtocolError('request must be a JSON object');
  }
  const req = parsed as Record<string, unknown>;
  const id = typeof req.id === 'number' && Number.isInteger(req.id) ? req.id : null;
  if (id === null) {
    throw new ProtocolError('request is missing an integer id');
  }
  if (typeof req.sample_rate !== 'number' || req.sample_rate <= 0) {
    throw new ProtocolError('request is missing a positive sample_rate', id);
  }
  if (typeof req.audio !== 'string') {
    throw new ProtocolError('request is missing the audio field', id);
  }
  return {
    id,
    sample_rate: req.sample_rate,
    audio: req.audio,
    language: (req.language as string | null | undefined) ?? null,
    vad_enabled: req.vad_enabled !== false,
    backend_options: (req.backend_options as Record<string, unknown>) ?? {},
  };
}

const BASE64_RE = /^[A-Za-z0-9+/]*={0,2}$/;

/** Decode base64 PCM16LE into normalized float32 samples. */
export function decodeAudio(audio: string, requestId: number): Float32Array {
  if (!BASE64_RE.test(audio) || audio.length % 4 !== 0) {
    throw new ProtocolError('audio field is not valid base64', requestId);
  }
  const raw = Buffer.from(audio, 'base64');
  if (raw.length % 2 !== 0) {
    throw new ProtocolError('decoded audio has odd byte length', requestId);
  }
  const samples = new Float32Array(raw.length / 2);
  for (let i = 0; i < samples.length; i++) {
    samples[i] = raw.readInt16LE(i * 2) / 32768;
  }
  return samples;
}

export function writeLine(message: unknown): void {
  process.stdout.write(JSON.stringify(message) + '\n');
}
