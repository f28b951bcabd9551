"""File I/O: mono 16-bit WAV and the TNS1 binary tensor format.

TNS1 layout: magic ``TNS1``, u32 rank, u32 dims[rank], then float32
little-endian values in row-major order. Semantics artifacts (prototypes,
guidance vectors) pair a .tns1 file with a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
import wave
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip

MAGIC = b"TNS1"


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype("<f4").tobytes(order="C"))


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype=np.float32)
    head = MAGIC + struct.pack("<I", array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.astype("<f4").tobytes(order="C")


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError("not a TNS1 tensor: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank > 8:
        raise ValueError(f"unreasonable TNS1 rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    off = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = off + 4 * count
    if len(blob) < expected:
        raise ValueError("truncated TNS1 payload")
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return flat.reshape(dims).astype(np.float64)


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_wav(path, clip: AudioClip) -> None:
    """RIFF PCM 16-bit little-endian mono."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def wav_bytes(clip: AudioClip) -> bytes:
    import io

    buf = io.BytesIO()
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())
    return buf.getvalue()


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError("expected mono WAV")
        if fh.getsampwidth() != 2:
            raise ValueError("expected 16-bit PCM WAV")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioClip(np.clip(samples, -1.0, 1.0), rate)


def write_sidecar(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = [
    "write_tensor",
    "read_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_wav",
    "read_wav",
    "wav_bytes",
    "write_sidecar",
    "read_sidecar",
]
