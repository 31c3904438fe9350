"""Minimal RIFF/WAVE reader and writer for the codecs this toolkit needs.

Little-endian linear PCM-16, PCM-24, and IEEE float-32 only.  Integer
samples are scaled by 2^(bits-1), so full scale maps onto [-1, 1).  Files
are interleaved on disk; buffers are channel-major in memory.  There is
no resampling: rate mismatches are the caller's problem to detect via
AudioBuffer.sample_rate.
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np


class WavFormatError(ValueError):
    """Structurally invalid or internally inconsistent WAV data."""


class UnsupportedWavEncodingError(WavFormatError):
    """Valid RIFF/WAVE, but a codec outside the supported set."""


class TruncatedWavError(WavFormatError):
    """The file ends before the declared end of a chunk."""


@dataclasses.dataclass
class AudioBuffer:
    """samples: (channels, frames) float64, nominally within [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be (channels, frames), got {self.samples.shape}")
        if self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError(f"need >= 1 channel and >= 1 frame, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if not (isinstance(self.sample_rate, (int, np.integer)) and self.sample_rate > 0):
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate


def _decode_pcm16(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0


def _decode_pcm24(payload: bytes) -> np.ndarray:
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    val = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
    val -= (val >= 1 << 23) * (1 << 24)
    return val.astype(np.float64) / float(1 << 23)


def _decode_float32(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def read_wav(path) -> AudioBuffer:
    """Read a PCM-16, PCM-24, or float-32 RIFF/WAVE file."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise WavFormatError(f"not a RIFF/WAVE file: {path}")
        fmt = None
        payload = None
        while True:
            chunk_header = fh.read(8)
            if len(chunk_header) == 0:
                break
            if len(chunk_header) < 8:
                raise TruncatedWavError(f"dangling chunk header in {path}")
            chunk_id, chunk_size = struct.unpack("<4sI", chunk_header)
            if chunk_id == b"fmt ":
                body = fh.read(chunk_size)
                if len(body) < 16:
                    raise TruncatedWavError(f"fmt chunk truncated in {path}")
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif chunk_id == b"data":
                payload = fh.read(chunk_size)
                if len(payload) < chunk_size:
                    raise TruncatedWavError(
                        f"data chunk declares {chunk_size} bytes,"
                        f" file provides {len(payload)}"
                    )
            else:
                fh.seek(chunk_size + (chunk_size & 1), 1)
            if chunk_size & 1 and chunk_id in (b"fmt ", b"data"):
                fh.seek(1, 1)

    if fmt is None or payload is None:
        raise WavFormatError(f"missing fmt or data chunk in {path}")
    audio_format, n_channels, sample_rate, _byte_rate, block_align, bits = fmt
    if n_channels == 0:
        raise WavFormatError(f"zero channels declared in {path}")
    if sample_rate == 0:
        raise WavFormatError(f"zero sample rate declared in {path}")

    if audio_format == 1 and bits == 16:
        decode, sample_bytes = _decode_pcm16, 2
    elif audio_format == 1 and bits == 24:
        decode, sample_bytes = _decode_pcm24, 3
    elif audio_format == 3 and bits == 32:
        decode, sample_bytes = _decode_float32, 4
    else:
        raise UnsupportedWavEncodingError(
            f"unsupported encoding: format code {audio_format}, {bits} bits"
        )
    if block_align != sample_bytes * n_channels:
        raise WavFormatError(
            f"block align {block_align} inconsistent with"
            f" {n_channels} x {sample_bytes}-byte samples"
        )
    if len(payload) % block_align != 0:
        raise WavFormatError(f"data chunk is not a whole number of frames in {path}")
    if len(payload) == 0:
        raise WavFormatError(f"empty data chunk in {path}")
    flat = decode(payload)
    if not np.all(np.isfinite(flat)):
        raise WavFormatError(f"non-finite samples in {path}")
    samples = flat.reshape(-1, n_channels).T.copy()
    return AudioBuffer(samples=samples, sample_rate=int(sample_rate))


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write a buffer as float32 (bit-exact round trip) or pcm16.

    pcm16 clamps to [-1, 1 - 2^-15] before quantizing, so the round-trip
    error is at most 2^-15 per sample.
    """
    if encoding not in ("float32", "pcm16"):
        raise ValueError(f"encoding must be 'float32' or 'pcm16', got {encoding!r}")
    samples = np.asarray(buffer.samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ValueError("cannot write non-finite samples")
    n_channels, _ = samples.shape
    interleaved = samples.T

    if encoding == "pcm16":
        audio_format, bits = 1, 16
        clipped = np.clip(interleaved, -1.0, 1.0 - 2.0**-15)
        data = np.round(clipped * 32768.0).astype("<i2").tobytes()
    else:
        audio_format, bits = 3, 32
        data = interleaved.astype("<f4").tobytes()

    block_align = n_channels * bits // 8
    byte_rate = buffer.sample_rate * block_align
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        n_channels,
        buffer.sample_rate,
        byte_rate,
        block_align,
        bits,
        b"data",
        len(data),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)
