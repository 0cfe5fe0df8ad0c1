"""Labeling policy, prompt rendering, dataset construction and persistence.

Labels are a pure function of SNR (four noise-severity classes).  Examples
are stored as JSONL; raw frames are never persisted because they are
regenerable from their seeds.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .sigsynth import IqFrame, synth_frame

CLASS_NAMES = ("Low Noise", "Moderate Noise", "High Noise", "Severe Noise")
N_CLASSES = 4
SPLITS = ("train", "val", "test")
TEMPLATE_VERSION = "v1"

PROMPT_TEMPLATE = (
    "You are diagnosing WiFi network pathologies based on signal information.\n"
    "Classify the WiFi condition based on the parameters provided.\n"
    "Parameters: In-phase and quadrature (I/Q) data are {iq}. "
    "The modulation type is {mod}. "
    "Signal-to-Noise Ratio (SNR) is equal to {snr}.\n"
    "Pathology Type:"
)

DEFAULT_SNR_GRID = tuple(range(-20, 31, 2))  # 26 levels, 2 dB steps
DEFAULT_MODULATIONS = ("BPSK", "QPSK", "QAM16", "QAM64")


class DatasetError(ValueError):
    pass


def derive_seed(run_seed: int, role: str) -> int:
    """Stable per-role seed: low 63 bits of sha256("{run_seed}:{role}")."""
    digest = hashlib.sha256(f"{run_seed}:{role}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def label_for_snr(snr_db: float) -> int:
    """Four-class noise-severity label; thresholds at 15, 5 and -10 dB,
    each inclusive on its upper edge."""
    if not math.isfinite(snr_db):
        raise DatasetError(f"invalid SNR: {snr_db!r}")
    if snr_db > 15:
        return 0
    if snr_db > 5:
        return 1
    if snr_db > -10:
        return 2
    return 3


def format_snr(snr_db: float) -> str:
    """Bare decimal rendering, integers without a decimal point, no unit."""
    if snr_db == int(snr_db):
        return str(int(snr_db))
    return format(snr_db, "g")


def _format_component(value: float, decimals: int) -> str:
    rounded = round(float(value), decimals)  # round-half-to-even
    if rounded == 0.0:
        rounded = 0.0  # normalize -0.0
    return f"{rounded:.{decimals}f}"


def render_prompt(frame: IqFrame, preview_len: int = 8, decimals: int = 3) -> str:
    """Fill the diagnosis template from a frame.

    The I/Q slot holds the first ``preview_len`` sample pairs rounded to
    ``decimals`` places; full frames would overflow any usable context.
    """
    if not 1 <= preview_len <= len(frame.samples):
        raise DatasetError(f"preview_len out of range: {preview_len}")
    pairs = []
    for s in frame.samples[:preview_len]:
        i = _format_component(s.real, decimals)
        q = _format_component(s.imag, decimals)
        pairs.append(f"({i},{q})")
    iq = "[" + ", ".join(pairs) + "]"
    if frame.snr_db_target is None:
        raise DatasetError("cannot render a noiseless frame: SNR is undefined")
    return PROMPT_TEMPLATE.format(iq=iq, mod=frame.modulation, snr=format_snr(frame.snr_db_target))


@dataclass(frozen=True)
class PromptExample:
    prompt: str
    label: int
    snr_db: float
    modulation: str
    frame_seed: int
    split: str

    @property
    def label_name(self) -> str:
        return CLASS_NAMES[self.label]


@dataclass
class DatasetManifest:
    modulations: list
    snr_levels: list
    frames_per_pair: int
    split_fracs: list
    seed: int
    preview_len: int
    decimals: int
    template_version: str = TEMPLATE_VERSION
    total: int = 0
    cell_counts: dict = field(default_factory=dict)  # "mod@snr" -> count
    class_split_counts: dict = field(default_factory=dict)  # split -> [c0..c3]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _largest_remainder_counts(n: int, fracs) -> list:
    """Integer allocation of n items to |fracs| buckets, exact total."""
    raw = [n * f for f in fracs]
    base = [int(x) for x in raw]
    short = n - sum(base)
    order = sorted(range(len(fracs)), key=lambda i: raw[i] - base[i], reverse=True)
    for i in order[:short]:
        base[i] += 1
    return base


def build_dataset(modulations=DEFAULT_MODULATIONS, snr_levels=DEFAULT_SNR_GRID,
                  frames_per_pair: int = 20, split_fracs=(0.8, 0.1, 0.1),
                  seed: int = 1, preview_len: int = 8, decimals: int = 3):
    """Synthesize one example per (modulation, snr, index) cell and split
    them train/val/test, stratified by class.

    Returns (examples, manifest); examples are ordered by cell then index,
    deterministic for a fixed seed.
    """
    if not modulations or not len(snr_levels):
        raise DatasetError("empty modulation list or SNR grid")
    if frames_per_pair < 1:
        raise DatasetError("frames_per_pair must be >= 1")
    if abs(sum(split_fracs) - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must sum to 1, got {sum(split_fracs)}")

    records = []
    cell_counts = {}
    for mod in modulations:
        for snr in snr_levels:
            cell_counts[f"{mod}@{format_snr(snr)}"] = frames_per_pair
            for k in range(frames_per_pair):
                fseed = derive_seed(seed, f"frame:{mod}:{format_snr(snr)}:{k}")
                frame = synth_frame(mod, snr, seed=fseed)
                records.append({
                    "prompt": render_prompt(frame, preview_len, decimals),
                    "label": label_for_snr(snr),
                    "snr_db": float(snr),
                    "modulation": mod,
                    "frame_seed": fseed,
                })

    # stratified split: shuffle within each class, then cut by fraction
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "split")))
    split_of = [""] * len(records)
    class_split_counts = {s: [0] * N_CLASSES for s in SPLITS}
    for cls in range(N_CLASSES):
        idx = [i for i, r in enumerate(records) if r["label"] == cls]
        rng.shuffle(idx)
        counts = _largest_remainder_counts(len(idx), split_fracs)
        pos = 0
        for split, cnt in zip(SPLITS, counts):
            for i in idx[pos:pos + cnt]:
                split_of[i] = split
            class_split_counts[split][cls] = cnt
            pos += cnt

    examples = [PromptExample(split=split_of[i], **records[i]) for i in range(len(records))]
    manifest = DatasetManifest(
        modulations=list(modulations), snr_levels=[float(s) for s in snr_levels],
        frames_per_pair=frames_per_pair, split_fracs=list(split_fracs), seed=seed,
        preview_len=preview_len, decimals=decimals, total=len(examples),
        cell_counts=cell_counts, class_split_counts=class_split_counts,
    )
    return examples, manifest


def manifest_total(n_modulations: int, n_snr_levels: int, frames_per_pair: int) -> int:
    """Frame-count arithmetic only; nothing is materialized."""
    return n_modulations * n_snr_levels * frames_per_pair


def atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_examples(examples, path: str) -> None:
    lines = []
    for ex in examples:
        lines.append(json.dumps({
            "prompt": ex.prompt, "label": ex.label, "label_name": ex.label_name,
            "snr_db": ex.snr_db, "modulation": ex.modulation,
            "frame_seed": ex.frame_seed, "split": ex.split,
        }, ensure_ascii=False))
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


_REQUIRED_FIELDS = ("prompt", "label", "label_name", "snr_db", "modulation", "frame_seed", "split")


def load_examples(path: str):
    """Read examples back, re-deriving each label from SNR and checking it
    against the stored fields (guards against silent policy drift)."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON: {exc}") from None
            for name in _REQUIRED_FIELDS:
                if name not in rec:
                    raise DatasetError(f"line {lineno}: missing field {name!r}")
            derived = label_for_snr(rec["snr_db"])
            if rec["label"] != derived or rec["label_name"] != CLASS_NAMES[derived]:
                raise DatasetError(f"line {lineno}: label/SNR mismatch")
            if rec["split"] not in SPLITS:
                raise DatasetError(f"line {lineno}: bad field 'split': {rec['split']!r}")
            examples.append(PromptExample(
                prompt=rec["prompt"], label=rec["label"], snr_db=rec["snr_db"],
                modulation=rec["modulation"], frame_seed=rec["frame_seed"],
                split=rec["split"]))
    return examples
