"""Real-time speech-transcription orchestration.

Adapts an offline whole-utterance transcriber to live audio via a shifting
chunk register, overlap re-transcription and edit-distance suggestions.
"""

__version__ = "0.1.0"
