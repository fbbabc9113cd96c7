"""Protocol parsing, corpus manifests, and a deterministic synthetic corpus.

The synthetic corpus stands in for restricted replay benchmarks at desk
scale. Bonafide files are pink-ish filtered noise, optionally with a random
low-frequency harmonic stack; spoof files carry an artifact confined to one
frequency band. The artifact is gated on and off over random time segments:
a band gain that is constant in time would only shift the per-bin log-power
mean, which per-utterance mean-variance normalization removes, so gating is
what keeps the class difference visible to the models while staying strictly
band-local.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError, ProtocolError
from . import frontend
from .frontend import (
    FrontendConfig,
    DEFAULT_FRONTEND,
    SpectrogramCache,
    TrimAnnotation,
    Waveform,
)

PARTITIONS = ("train", "dev", "eval")
LABELS = ("bonafide", "spoof")


@dataclass
class ProtocolEntry:
    utterance_id: str
    label: str
    partition: str
    attributes: dict = field(default_factory=dict)


_FORMAT_PROFILES = {
    # column layout: (id column, label column, label token -> canonical)
    "canonical": (0, 1, {"bonafide": "bonafide", "spoof": "spoof"}),
    "v2017": (0, 1, {"genuine": "bonafide", "spoof": "spoof"}),
    "v2019pa": (1, 4, {"bonafide": "bonafide", "spoof": "spoof"}),
}


def parse_protocol(path, format: str = "canonical", partition: str = "train") -> list[ProtocolEntry]:
    """Parse a whitespace-separated trial list into protocol entries.

    `format` selects the column profile; only utterance id and label are
    consumed, remaining columns are kept as opaque attributes. The canonical
    format is exactly `utterance_id label` with bonafide/spoof labels.
    """
    if format not in _FORMAT_PROFILES:
        raise ProtocolError(f"unknown protocol format {format!r}")
    id_col, label_col, label_map = _FORMAT_PROFILES[format]
    n_cols_min = max(id_col, label_col) + 1
    entries: list[ProtocolEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < n_cols_min:
                raise ProtocolError(
                    f"{path}:{lineno}: expected at least {n_cols_min} columns, got {len(parts)}"
                )
            if format == "canonical" and len(parts) != 2:
                raise ProtocolError(f"{path}:{lineno}: canonical format is 'utterance_id label'")
            utt = parts[id_col]
            token = parts[label_col]
            if token not in label_map:
                raise ProtocolError(f"{path}:{lineno}: unknown label {token!r}")
            if utt in seen:
                raise ProtocolError(f"{path}:{lineno}: duplicate utterance id {utt!r}")
            seen.add(utt)
            attributes = {
                f"col{j}": parts[j]
                for j in range(len(parts))
                if j not in (id_col, label_col)
            }
            entries.append(
                ProtocolEntry(utterance_id=utt, label=label_map[token],
                              partition=partition, attributes=attributes)
            )
    return entries


def write_protocol(entries: list[ProtocolEntry], path) -> None:
    """Write entries in the canonical `utterance_id label` format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.utterance_id} {e.label}\n")


@dataclass
class CorpusManifest:
    """Description of an on-disk corpus: protocols, audio root, trim mode."""

    name: str
    root: str
    partitions: dict  # partition -> {"protocol": str, "n_bonafide": int, "n_spoof": int}
    trim_mode: str = "none"  # zeros | annotation | none
    annotation_file: str | None = None
    protocol_format: str = "canonical"
    content_hash: str = ""

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        payload = json.loads(Path(path).read_text())
        return cls(**payload)

    def protocol_path(self, partition: str) -> Path:
        if partition not in self.partitions:
            raise DataError(f"corpus {self.name!r} has no partition {partition!r}")
        return Path(self.root) / self.partitions[partition]["protocol"]

    def audio_path(self, utterance_id: str) -> Path:
        return Path(self.root) / "audio" / f"{utterance_id}.wav"


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for the deterministic synthetic corpus."""

    seed: int = 0
    n_per_class_per_partition: tuple[int, int, int] = (40, 20, 40)
    artifact_band_hz: tuple[float, float] = (7000.0, 8000.0)
    artifact_kind: str = "band_notch"  # band_gain | band_hum | band_notch
    artifact_strength: float = 12.0  # dB
    base_signal: str = "harmonic_mix"  # filtered_noise | harmonic_mix

    def __post_init__(self):
        low, high = self.artifact_band_hz
        if not (0 <= low < high <= 8000):
            raise DataError(f"artifact band {self.artifact_band_hz} outside [0, 8000] Hz")
        if self.artifact_strength <= 0:
            raise DataError("artifact strength must be positive")
        if self.artifact_kind not in ("band_gain", "band_hum", "band_notch"):
            raise DataError(f"unknown artifact kind {self.artifact_kind!r}")
        if self.base_signal not in ("filtered_noise", "harmonic_mix"):
            raise DataError(f"unknown base signal {self.base_signal!r}")


# Gate segments alternate the artifact on/off; lengths in seconds.
_GATE_SEG_RANGE = (0.25, 0.70)
_GATE_RAMP_S = 0.010
_DUTY_ON = 0.65  # probability a segment has the artifact active


def _base_signal(rng: np.random.Generator, n: int, kind: str, sr: int) -> np.ndarray:
    """Pink-ish noise, plus a random 3-partial harmonic stack for harmonic_mix."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    tilt = (1.0 + freqs / 300.0) ** -0.8
    x = np.fft.irfft(spec * tilt, n=n)
    x /= max(np.sqrt(np.mean(x**2)), 1e-12)
    if kind == "harmonic_mix":
        f0 = rng.uniform(120.0, 400.0)
        t = np.arange(n) / sr
        for k in range(1, 4):
            amp = rng.uniform(0.2, 0.6) / k
            phase = rng.uniform(0, 2 * np.pi)
            x = x + amp * np.sin(2 * np.pi * k * f0 * t + phase)
    return x


def _band_decompose(x: np.ndarray, band_hz: tuple[float, float], sr: int) -> tuple[np.ndarray, np.ndarray]:
    """Split x into its in-band and out-of-band components (exact complement)."""
    n = len(x)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    mask = (freqs >= band_hz[0]) & (freqs < band_hz[1])
    in_band = np.fft.irfft(spec * mask, n=n)
    return in_band, x - in_band


def _gate_envelope(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Random on/off segments with raised-cosine ramps, values in [0, 1]."""
    gate = np.zeros(n)
    ramp_n = int(_GATE_RAMP_S * sr)
    ramp = 0.5 * (1 - np.cos(np.linspace(0, np.pi, ramp_n)))
    pos = 0
    state = rng.random() < _DUTY_ON
    while pos < n:
        seg_len = int(rng.uniform(*_GATE_SEG_RANGE) * sr)
        end = min(pos + seg_len, n)
        if state:
            gate[pos:end] = 1.0
            # soften the segment edges
            lo = min(ramp_n, end - pos)
            gate[pos : pos + lo] = np.minimum(gate[pos : pos + lo], ramp[:lo])
            gate[end - lo : end] = np.minimum(gate[end - lo : end], ramp[:lo][::-1])
        pos = end
        state = rng.random() < _DUTY_ON
    return gate


def _apply_artifact(
    rng: np.random.Generator, x: np.ndarray, spec: SynthSpec, sr: int
) -> np.ndarray:
    """Apply the band-localized spoof artifact to a base signal."""
    in_band, out_band = _band_decompose(x, spec.artifact_band_hz, sr)
    gate = _gate_envelope(rng, len(x), sr)
    if spec.artifact_kind == "band_notch":
        factor = 10.0 ** (-spec.artifact_strength / 20.0)
        gain = 1.0 + (factor - 1.0) * gate
        return out_band + gain * in_band
    if spec.artifact_kind == "band_gain":
        factor = 10.0 ** (spec.artifact_strength / 20.0)
        gain = 1.0 + (factor - 1.0) * gate
        return out_band + gain * in_band
    # band_hum: gated narrowband tones added on top of the base signal
    low, high = spec.artifact_band_hz
    t = np.arange(len(x)) / sr
    hum = np.zeros(len(x))
    for _ in range(3):
        f = rng.uniform(low + 0.05 * (high - low), high - 0.05 * (high - low))
        hum += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    band_rms = max(np.sqrt(np.mean(in_band**2)), 1e-9)
    hum *= band_rms * 10.0 ** (spec.artifact_strength / 20.0) / np.sqrt(1.5)
    return x + gate * hum


def _render_file(rng: np.random.Generator, spec: SynthSpec, label: str, sr: int) -> np.ndarray:
    dur_s = rng.uniform(2.2, 3.6)
    n = int(dur_s * sr)
    x = _base_signal(rng, n, spec.base_signal, sr)
    if label == "spoof":
        x = _apply_artifact(rng, x, spec, sr)
    x *= 0.35 / max(np.max(np.abs(x)), 1e-9)
    pad_lo = int(rng.integers(800, 2400))
    pad_hi = int(rng.integers(800, 2400))
    return np.concatenate([np.zeros(pad_lo), x, np.zeros(pad_hi)])


def generate_synthetic(spec: SynthSpec, out_dir) -> CorpusManifest:
    """Write the synthetic corpus (audio + canonical protocols + manifest).

    Output is a pure function of `spec`: regenerating with the same spec
    yields byte-identical files and an equal manifest hash.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "protocols").mkdir(parents=True, exist_ok=True)
    sr = frontend.SAMPLE_RATE

    partitions: dict = {}
    hasher = hashlib.sha256()
    for pi, partition in enumerate(PARTITIONS):
        n_files = spec.n_per_class_per_partition[pi]
        entries: list[ProtocolEntry] = []
        for ci, label in enumerate(LABELS):
            for fi in range(n_files):
                utt = f"{partition}_{label}_{fi:04d}"
                rng = np.random.default_rng([spec.seed, pi, ci, fi])
                samples = _render_file(rng, spec, label, sr)
                frontend.save_waveform(out_dir / "audio" / f"{utt}.wav", samples, sr)
                entries.append(ProtocolEntry(utterance_id=utt, label=label, partition=partition))
        proto_rel = f"protocols/{partition}.txt"
        write_protocol(entries, out_dir / proto_rel)
        partitions[partition] = {
            "protocol": proto_rel,
            "n_bonafide": n_files,
            "n_spoof": n_files,
        }

    for wav in sorted((out_dir / "audio").glob("*.wav")):
        hasher.update(wav.name.encode())
        hasher.update(wav.read_bytes())
    for partition in PARTITIONS:
        hasher.update((out_dir / partitions[partition]["protocol"]).read_bytes())
    hasher.update(json.dumps(asdict(spec), sort_keys=True).encode())

    manifest = CorpusManifest(
        name=f"synth_{spec.artifact_kind}_{spec.seed}",
        root=str(out_dir),
        partitions=partitions,
        trim_mode="zeros",
        content_hash=hasher.hexdigest(),
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def iter_partition(
    manifest: CorpusManifest,
    partition: str,
    rejects: list[str] | None = None,
    on_missing_annotation: str = "error",
) -> Iterator[tuple[Waveform, str]]:
    """Yield (trimmed waveform, label) in protocol order.

    Missing or unreadable audio files are skipped and recorded in `rejects`
    when a list is supplied. Annotation-trim corpora need their annotation
    table; a missing per-utterance annotation raises unless
    `on_missing_annotation` is 'keep' (pass-through untrimmed).
    """
    entries = parse_protocol(
        manifest.protocol_path(partition), manifest.protocol_format, partition
    )
    if not entries:
        raise DataError(f"partition {partition!r} of {manifest.name!r} is empty")
    annotations: dict[str, TrimAnnotation] = {}
    if manifest.trim_mode == "annotation":
        if manifest.annotation_file is None:
            raise DataError(f"corpus {manifest.name!r} uses annotation trim but has no annotation file")
        annotations = frontend.parse_trim_annotations(Path(manifest.root) / manifest.annotation_file)

    for entry in entries:
        path = manifest.audio_path(entry.utterance_id)
        try:
            w = frontend.load_waveform(path)
        except frontend.AudioFormatError:
            if rejects is not None:
                rejects.append(entry.utterance_id)
            continue
        if manifest.trim_mode == "zeros":
            w = frontend.trim_zeros(w)
        elif manifest.trim_mode == "annotation":
            ann = annotations.get(entry.utterance_id)
            if ann is None:
                if on_missing_annotation == "keep":
                    pass
                else:
                    raise DataError(f"no trim annotation for {entry.utterance_id!r}")
            else:
                w = frontend.trim_annotated(w, ann)
        yield w, entry.label


def load_partition(manifest: CorpusManifest, partition: str, rejects: list[str] | None = None):
    """List-returning convenience wrapper over :func:`iter_partition`."""
    return list(iter_partition(manifest, partition, rejects=rejects))


@dataclass
class FeatureSet:
    """Normalized spectrograms for one partition, in protocol order."""

    ids: list[str]
    labels: list[str]
    features: np.ndarray  # (n, frames, bins) float32
    rejects: list[str]


def partition_features(
    manifest: CorpusManifest,
    partition: str,
    cfg: FrontendConfig = DEFAULT_FRONTEND,
    cache_dir=None,
) -> FeatureSet:
    """Run the full front-end over a partition.

    With `cache_dir`, spectrograms are reused across calls; the cache is
    keyed by the front-end parameter hash and dropped when parameters change.
    """
    entries = parse_protocol(
        manifest.protocol_path(partition), manifest.protocol_format, partition
    )
    if not entries:
        raise DataError(f"partition {partition!r} of {manifest.name!r} is empty")
    cache = SpectrogramCache(cache_dir, cfg) if cache_dir is not None else None

    annotations: dict[str, TrimAnnotation] = {}
    if manifest.trim_mode == "annotation":
        if manifest.annotation_file is None:
            raise DataError(f"corpus {manifest.name!r} uses annotation trim but has no annotation file")
        annotations = frontend.parse_trim_annotations(Path(manifest.root) / manifest.annotation_file)

    ids: list[str] = []
    labels: list[str] = []
    mats: list[np.ndarray] = []
    rejects: list[str] = []
    for entry in entries:
        cached = cache.get(entry.utterance_id) if cache is not None else None
        if cached is not None:
            ids.append(entry.utterance_id)
            labels.append(entry.label)
            mats.append(cached)
            continue
        path = manifest.audio_path(entry.utterance_id)
        try:
            w = frontend.load_waveform(path)
        except frontend.AudioFormatError:
            rejects.append(entry.utterance_id)
            continue
        spec = frontend.waveform_pipeline(
            w, cfg, trim=manifest.trim_mode, annotation=annotations.get(entry.utterance_id)
        )
        values = spec.values.astype(np.float32)
        if cache is not None:
            cache.put(entry.utterance_id, values)
        ids.append(entry.utterance_id)
        labels.append(entry.label)
        mats.append(values)
    if not mats:
        raise DataError(f"no loadable audio in partition {partition!r}")
    return FeatureSet(ids=ids, labels=labels, features=np.stack(mats), rejects=rejects)
