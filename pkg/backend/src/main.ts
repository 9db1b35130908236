/**
 * Backend entry point: handshake, then serve requests line by line until
 * stdin closes. Per-request failures produce error lines, never exits.
 *
 * Usage: node dist/main.js [--engine stub|whisper-cpp] [--model-size base]
 *                          [--language en] [--whisper-bin whisper-cli]
 *                          [--model-path /path/to/ggml-base.bin]
 */

import * as readline from 'readline';

import { Engine, EngineConfig, MODEL_SIZES, ModelSize, StubEngine } from './engine';
import { ProtocolError, decodeAudio, parseRequest, writeLine } from './protocol';
import { WhisperCppEngine } from './whisperCpp';

interface CliOptions {
  engine: string;
  config: EngineConfig;
}

function parseArgs(argv: string[]): CliOptions {
  const values: Record<string, string> = {
    engine: 'stub',
    'model-size': 'base',
    'whisper-bin': process.env.WHISPER_CPP_BIN ?? 'whisper-cli',
  };
  if (process.env.WHISPER_CPP_MODEL) {
    values['model-path'] = process.env.WHISPER_CPP_MODEL;
  }
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith('--') || value === undefined) {
      throw new Error(`invalid arguments near ${flag}`);
    }
    values[flag.slice(2)] = value;
  }
  if (!MODEL_SIZES.includes(values['model-size'] as ModelSize)) {
    throw new Error(
      `model size must be one of ${MODEL_SIZES.join(', ')}, got ${values['model-size']}`,
    );
  }
  return {
    engine: values.engine,
    config: {
      modelSize: values['model-size'] as ModelSize,
      language: values.language ?? null,
      whisperBin: values['whisper-bin'],
      modelPath: values['model-path'] ?? null,
    },
  };
}

function buildEngine(options: CliOptions): Engine {
  switch (options.engine) {
    case 'stub':
      return new StubEngine(options.config);
    case 'whisper-cpp':
      return new WhisperCppEngine(options.config);
    default:
      throw new Error(`unknown engine ${options.engine}`);
  }
}

async function handleLine(engine: Engine, line: string): Promise<void> {
  if (!line.trim()) {
    return;
  }
  let requestId = -1;
  try {
    const request = parseRequest(line);
    requestId = request.id;
    const samples = decodeAudio(request.audio, request.id);
    const started = process.hrtime.bigint();
    const result = await engine.transcribe({
      samples,
      sampleRate: request.sample_rate,
      language: request.language ?? null,
      vadEnabled: request.vad_enabled !== false,
      options: request.backend_options ?? {},
    });
    const modelTime = Number(process.hrtime.bigint() - started) / 1e9;
    writeLine({
      id: request.id,
      text: result.text,
      segments: result.segments,
      model_time: modelTime,
    });
  } catch (err) {
    const id = err instanceof ProtocolError ? err.requestId : requestId;
    const message = err instanceof Error ? err.message : String(err);
    writeLine({ id, error: message });
  }
}

async function main(): Promise<void> {
  let engine: Engine;
  try {
    engine = buildEngine(parseArgs(process.argv.slice(2)));
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }

  writeLine({ ready: true, backend: engine.name });

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const line of rl) {
    await handleLine(engine, line); // strictly serialized, one in flight
  }
}

main().catch((err) => {
  process.stderr.write(`fatal: ${err}\n`);
  process.exit(1);
});
