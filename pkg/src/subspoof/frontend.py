"""Audio front-end: WAV loading, trimming, duration standardization and the
normalized log-power spectrogram used as model input.

The representation contract is fixed: 16 kHz mono PCM16 in, 3 s standardized
waveform, 512-point FFT with a 512-sample (32 ms) Hamming window and a
160-sample (10 ms) hop, giving a 300x257 log-power matrix which is then
mean-variance normalized per frequency bin within the utterance.

Framing is centered: the waveform is reflect-padded by 256 samples at each
end and one frame is taken per hop interval, so the frame count is exactly
``n_samples / hop == 300``.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import wave
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, ConfigError, DataError, ProtocolError

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class FrontendConfig:
    """Parameters of the spectrogram front-end.

    The defaults are the contract the models are trained against; changing
    any field changes :meth:`content_hash` and therefore invalidates caches
    and makes checkpoints incompatible.
    """

    sample_rate: int = SAMPLE_RATE
    n_fft: int = 512
    win_length: int = 512
    hop_length: int = 160
    target_seconds: float = 3.0
    window: str = "hamming"
    log_floor: float = 1e-10

    @property
    def target_samples(self) -> int:
        return int(round(self.target_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return self.target_samples // self.hop_length

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def content_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


DEFAULT_FRONTEND = FrontendConfig()


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    utterance_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError(
                f"{self.utterance_id or '<waveform>'}: expected mono 1-D samples, "
                f"got shape {self.samples.shape}"
            )

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class TrimAnnotation:
    """Speech endpoints for one utterance, in samples, [start, end)."""

    utterance_id: str
    start_sample: int
    end_sample: int

    def __post_init__(self):
        if self.start_sample < 0 or self.end_sample <= self.start_sample:
            raise ProtocolError(
                f"{self.utterance_id}: bad trim interval "
                f"({self.start_sample}, {self.end_sample})"
            )


@dataclass
class Spectrogram:
    """Time x frequency matrix of log-power values."""

    values: np.ndarray
    frame_hop_s: float = 0.010
    window_s: float = 0.032
    bin_hz: float = SAMPLE_RATE / 512
    utterance_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


def load_waveform(path, expected_rate: int = SAMPLE_RATE) -> Waveform:
    """Load a RIFF/WAVE file as a :class:`Waveform`.

    Only mono 16-bit PCM at `expected_rate` is accepted; anything else is
    rejected rather than converted. Amplitudes are scaled by 1/32768, so
    full-scale positive samples map to 32767/32768.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except FileNotFoundError:
        raise AudioFormatError(f"audio file not found: {path}")
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"unreadable WAV file {path}: {exc}")

    if n_channels != 1:
        raise AudioFormatError(f"{path}: multichannel input ({n_channels} channels) rejected")
    if sampwidth != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    if rate != expected_rate:
        raise AudioFormatError(f"{path}: unsupported sample rate {rate} (expected {expected_rate})")

    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    return Waveform(samples=samples, sample_rate=rate, utterance_id=path.stem)


def save_waveform(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM (values clipped)."""
    samples = np.asarray(samples, dtype=np.float64)
    ints = np.clip(np.rint(samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(ints.tobytes())


def trim_zeros(w: Waveform) -> Waveform:
    """Drop samples exactly equal to zero from both ends (interior kept)."""
    nz = np.flatnonzero(w.samples != 0.0)
    if nz.size == 0:
        raise DataError(f"{w.utterance_id or '<waveform>'}: empty after trim (all-zero signal)")
    out = w.samples[nz[0] : nz[-1] + 1]
    return Waveform(samples=out, sample_rate=w.sample_rate, utterance_id=w.utterance_id)


def trim_annotated(w: Waveform, a: TrimAnnotation) -> Waveform:
    """Keep samples [start_sample, end_sample) given an endpoint annotation."""
    if a.utterance_id != w.utterance_id:
        raise ProtocolError(
            f"annotation id {a.utterance_id!r} does not match waveform {w.utterance_id!r}"
        )
    if a.end_sample > len(w):
        raise ProtocolError(
            f"{w.utterance_id}: annotation end {a.end_sample} beyond waveform length {len(w)}"
        )
    out = w.samples[a.start_sample : a.end_sample]
    return Waveform(samples=out, sample_rate=w.sample_rate, utterance_id=w.utterance_id)


def parse_trim_annotations(path) -> dict[str, TrimAnnotation]:
    """Read a tab-separated endpoint file: utterance_id, start, end per line.

    Lines starting with '#' are comments. Returns a dict keyed by utterance.
    """
    table: dict[str, TrimAnnotation] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ProtocolError(f"{path}:{lineno}: expected 3 tab-separated fields")
            utt, start_s, end_s = parts
            try:
                ann = TrimAnnotation(utt, int(start_s), int(end_s))
            except ValueError:
                raise ProtocolError(f"{path}:{lineno}: non-integer sample index")
            if utt in table:
                raise ProtocolError(f"{path}:{lineno}: duplicate annotation for {utt!r}")
            table[utt] = ann
    return table


def standardize_duration(w: Waveform, cfg: FrontendConfig = DEFAULT_FRONTEND) -> Waveform:
    """Tile or truncate the waveform to exactly ``cfg.target_samples``."""
    n = len(w)
    if n == 0:
        raise DataError(f"{w.utterance_id or '<waveform>'}: empty waveform")
    target = cfg.target_samples
    if n >= target:
        out = w.samples[:target]
    else:
        reps = int(np.ceil(target / n))
        out = np.tile(w.samples, reps)[:target]
    return Waveform(samples=out, sample_rate=w.sample_rate, utterance_id=w.utterance_id)


def _window(cfg: FrontendConfig) -> np.ndarray:
    if cfg.window == "hamming":
        return np.hamming(cfg.win_length)
    if cfg.window == "hann":
        return np.hanning(cfg.win_length)
    raise ConfigError(f"unknown window {cfg.window!r}")


def log_power_spectrogram(w: Waveform, cfg: FrontendConfig = DEFAULT_FRONTEND) -> Spectrogram:
    """Centered-framing STFT log power: ``log(|X|^2 + log_floor)``.

    Expects the standardized duration (48000 samples at defaults) and yields
    exactly ``target_samples / hop`` frames (300) by ``n_fft//2 + 1`` bins
    (257). Frame i is centered on sample ``i * hop`` of the unpadded signal.
    """
    x = w.samples
    if len(x) != cfg.target_samples:
        raise DataError(
            f"{w.utterance_id}: expected {cfg.target_samples} samples, got {len(x)}"
        )
    half = cfg.n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    n_frames = cfg.n_frames
    starts = np.arange(n_frames) * cfg.hop_length
    idx = starts[:, None] + np.arange(cfg.win_length)[None, :]
    frames = padded[idx] * _window(cfg)[None, :]
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    values = np.log(power + cfg.log_floor)
    return Spectrogram(
        values=values,
        frame_hop_s=cfg.hop_length / cfg.sample_rate,
        window_s=cfg.win_length / cfg.sample_rate,
        bin_hz=cfg.sample_rate / cfg.n_fft,
        utterance_id=w.utterance_id,
    )


def mvn_normalize(s: Spectrogram, std_floor: float = 1e-12) -> Spectrogram:
    """Per-bin mean-variance normalization within the utterance.

    Each frequency bin is shifted to zero mean and scaled to unit variance
    across frames. Bins whose standard deviation is at or below `std_floor`
    (constant bins) are output as all zeros.
    """
    if s.n_frames < 2:
        raise DataError(f"{s.utterance_id}: need >= 2 frames for normalization")
    mean = s.values.mean(axis=0)
    std = s.values.std(axis=0)
    centered = s.values - mean[None, :]
    out = np.where(std[None, :] > std_floor, centered / np.where(std > std_floor, std, 1.0)[None, :], 0.0)
    return Spectrogram(
        values=out,
        frame_hop_s=s.frame_hop_s,
        window_s=s.window_s,
        bin_hz=s.bin_hz,
        utterance_id=s.utterance_id,
    )


def waveform_pipeline(
    w: Waveform,
    cfg: FrontendConfig = DEFAULT_FRONTEND,
    trim: str = "none",
    annotation: TrimAnnotation | None = None,
) -> Spectrogram:
    """Full front-end: trim -> standardize -> spectrogram -> normalize.

    `trim` is one of 'zeros', 'annotation', 'none'. Annotation trimming
    requires `annotation`.
    """
    if trim == "zeros":
        w = trim_zeros(w)
    elif trim == "annotation":
        if annotation is None:
            raise DataError(f"{w.utterance_id}: annotation trim requested but none provided")
        w = trim_annotated(w, annotation)
    elif trim != "none":
        raise DataError(f"unknown trim mode {trim!r}")
    w = standardize_duration(w, cfg)
    return mvn_normalize(log_power_spectrogram(w, cfg))


class SpectrogramCache:
    """On-disk cache of normalized spectrograms, keyed by utterance id.

    The cache directory carries the front-end parameter hash; opening it
    with a different configuration drops all stored entries.
    """

    VERSION_FILE = "cache_version.json"

    def __init__(self, directory, cfg: FrontendConfig = DEFAULT_FRONTEND):
        self.directory = Path(directory)
        self.cfg = cfg
        self.directory.mkdir(parents=True, exist_ok=True)
        version_path = self.directory / self.VERSION_FILE
        tag = {"frontend_hash": cfg.content_hash(), "format": 1}
        if version_path.exists():
            try:
                stored = json.loads(version_path.read_text())
            except json.JSONDecodeError:
                stored = None
            if stored != tag:
                for f in self.directory.glob("*.npy"):
                    f.unlink()
        version_path.write_text(json.dumps(tag, sort_keys=True))

    def _entry(self, utterance_id: str) -> Path:
        safe = utterance_id.replace("/", "_")
        return self.directory / f"{safe}.npy"

    def get(self, utterance_id: str) -> np.ndarray | None:
        p = self._entry(utterance_id)
        if not p.exists():
            return None
        return np.load(p)

    def put(self, utterance_id: str, values: np.ndarray) -> None:
        np.save(self._entry(utterance_id), values)

    def clear(self) -> None:
        shutil.rmtree(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)
