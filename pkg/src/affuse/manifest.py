"""Dataset manifests, 5-point label scaling, and train/dev/test splitting.

A manifest is a CSV inventory of utterances with audio paths, transcripts,
raw 5-point labels, and session/speaker ids. Raw labels outside [1, 5] are
dropped (not clamped) during cleaning, with a logged warning per row.

Two split modes are supported:

* ``SD`` (speaker-dependent): seeded shuffle, then slices sized 64/16/20
  percent for train/dev/test.
* ``LOSO`` (leave-one-session-out): the held-out sessions form the test
  set; the remainder is shuffled and split 80/20 into train/dev. Speakers
  of held-out sessions must not occur elsewhere, otherwise the split would
  leak test speakers and an error is raised.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    LabelOutOfRangeError,
    ManifestError,
    SpeakerOverlapError,
    UnknownSessionError,
)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = (
    "utterance_id",
    "audio_path",
    "transcript",
    "valence",
    "arousal",
    "dominance",
    "session_id",
    "speaker_id",
)


@dataclass(frozen=True)
class ManifestRow:
    utterance_id: str
    audio_path: str
    transcript: str
    valence: float
    arousal: float
    dominance: float
    session_id: str
    speaker_id: str

    def raw_labels(self) -> np.ndarray:
        return np.array([self.valence, self.arousal, self.dominance], dtype=np.float64)


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple[ManifestRow, ...]

    def __post_init__(self):
        ids = [r.utterance_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ManifestError("utterance ids must be unique")
        for r in self.rows:
            if not r.session_id or not r.speaker_id:
                raise ManifestError(
                    f"{r.utterance_id}: session_id and speaker_id must be non-empty"
                )
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> tuple[str, ...]:
        return tuple(r.utterance_id for r in self.rows)

    def sessions(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.session_id)
        return tuple(seen)

    def by_id(self) -> dict[str, ManifestRow]:
        return {r.utterance_id: r for r in self.rows}

    def subset(self, ids) -> "DatasetManifest":
        table = self.by_id()
        return DatasetManifest(tuple(table[i] for i in ids))


def scale_labels(raw):
    """Map 5-point labels linearly onto [-1, 1]: (raw - 3) / 2.

    Works on scalars and arrays.

    Raises:
        LabelOutOfRangeError: any value outside [1, 5].
    """
    values = np.asarray(raw, dtype=np.float64)
    if np.any(values < 1.0) or np.any(values > 5.0) or not np.all(np.isfinite(values)):
        raise LabelOutOfRangeError(f"raw labels must lie in [1, 5], got {raw!r}")
    scaled = (values - 3.0) / 2.0
    return float(scaled) if np.isscalar(raw) else scaled


def unscale_labels(scaled):
    """Inverse of :func:`scale_labels`: 2 * value + 3."""
    values = np.asarray(scaled, dtype=np.float64)
    raw = 2.0 * values + 3.0
    return float(raw) if np.isscalar(scaled) else raw


def scaled_label_matrix(manifest: DatasetManifest) -> np.ndarray:
    """(n, 3) matrix of scaled labels in manifest order."""
    raw = np.array([r.raw_labels() for r in manifest.rows])
    return scale_labels(raw)


def clean_manifest(manifest: DatasetManifest) -> tuple[DatasetManifest, list[str]]:
    """Drop rows with labels outside the 5-point scale; returns dropped ids."""
    keep, dropped = [], []
    for row in manifest.rows:
        labels = row.raw_labels()
        if np.all((labels >= 1.0) & (labels <= 5.0)) and np.all(np.isfinite(labels)):
            keep.append(row)
        else:
            dropped.append(row.utterance_id)
            logger.warning(
                "dropping %s: raw labels %s outside [1, 5]", row.utterance_id, labels
            )
    return DatasetManifest(tuple(keep)), dropped


def read_manifest(path) -> DatasetManifest:
    """Parse a manifest CSV; errors carry the offending line number."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}:1: expected header {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            try:
                rows.append(
                    ManifestRow(
                        utterance_id=row[0],
                        audio_path=row[1],
                        transcript=row[2],
                        valence=float(row[3]),
                        arousal=float(row[4]),
                        dominance=float(row[5]),
                        session_id=row[6],
                        speaker_id=row[7],
                    )
                )
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return DatasetManifest(tuple(rows))


def write_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            writer.writerow(
                [
                    r.utterance_id,
                    r.audio_path,
                    r.transcript,
                    f"{r.valence:.6g}",
                    f"{r.arousal:.6g}",
                    f"{r.dominance:.6g}",
                    r.session_id,
                    r.speaker_id,
                ]
            )


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/dev/test id sets covering one cleaned manifest."""

    mode: str
    train_ids: tuple[str, ...]
    dev_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    heldout_sessions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in ("SD", "LOSO"):
            raise ValueError(f"mode must be 'SD' or 'LOSO', got {self.mode!r}")
        groups = (set(self.train_ids), set(self.dev_ids), set(self.test_ids))
        if groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2]:
            raise ValueError("split id sets must be disjoint")


def make_split(
    manifest: DatasetManifest,
    mode: str,
    heldout_sessions=None,
    seed: int = 0,
) -> SplitPlan:
    """Deterministic split of a cleaned manifest.

    Raises:
        UnknownSessionError: LOSO held-out session missing from manifest.
        SpeakerOverlapError: a held-out speaker also occurs in other sessions.
    """
    ids = list(manifest.ids())
    rng = np.random.default_rng(seed)
    if mode == "SD":
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n = len(ids)
        n_test = round(0.2 * n)
        remainder = n - n_test
        n_train = round(0.8 * remainder)
        return SplitPlan(
            mode="SD",
            train_ids=tuple(shuffled[:n_train]),
            dev_ids=tuple(shuffled[n_train : remainder]),
            test_ids=tuple(shuffled[remainder:]),
        )
    if mode != "LOSO":
        raise ValueError(f"unknown split mode {mode!r}")
    heldout = tuple(heldout_sessions or ())
    if not heldout:
        raise UnknownSessionError("LOSO requires at least one held-out session")
    present = set(manifest.sessions())
    missing = [s for s in heldout if s not in present]
    if missing:
        raise UnknownSessionError(f"sessions not in manifest: {missing}")
    heldout_set = set(heldout)
    test_rows = [r for r in manifest.rows if r.session_id in heldout_set]
    rest_rows = [r for r in manifest.rows if r.session_id not in heldout_set]
    test_speakers = {r.speaker_id for r in test_rows}
    leaking = sorted({r.speaker_id for r in rest_rows} & test_speakers)
    if leaking:
        raise SpeakerOverlapError(
            f"held-out speakers also appear outside held-out sessions: {leaking}"
        )
    if not rest_rows:
        raise DataError("held-out sessions cover the whole manifest")
    rest_ids = [r.utterance_id for r in rest_rows]
    order = rng.permutation(len(rest_ids))
    shuffled = [rest_ids[i] for i in order]
    n_train = round(0.8 * len(shuffled))
    return SplitPlan(
        mode="LOSO",
        train_ids=tuple(shuffled[:n_train]),
        dev_ids=tuple(shuffled[n_train:]),
        test_ids=tuple(r.utterance_id for r in test_rows),
        heldout_sessions=heldout,
    )
