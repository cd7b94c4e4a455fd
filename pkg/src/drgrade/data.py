"""Dataset ingestion, splitting, and the synthetic graded-image generator.

Manifest CSVs use the header ``id_code,diagnosis`` with images stored as
``<id_code>.png``; prediction CSVs are ``id_code,score,grade``. Emitted CSVs
use LF line endings; both LF and CRLF parse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .grading import GRADE_COUNT
from .rng import Xoshiro256StarStar
from .util import round_half_away

MANIFEST_HEADER = ["id_code", "diagnosis"]
PREDICTIONS_HEADER = ["id_code", "score", "grade"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Manifest:
    entries: tuple[tuple[str, int], ...]
    source_dir: Path | None = None

    def __len__(self):
        return len(self.entries)

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.2
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a u64")


@dataclass(frozen=True)
class ClassDistribution:
    counts: tuple[int, ...]
    fractions: tuple[float, ...]


def class_distribution(manifest: Manifest) -> ClassDistribution:
    counts = [0] * GRADE_COUNT
    for _, g in manifest.entries:
        counts[g] += 1
    total = len(manifest.entries)
    fractions = tuple(c / total for c in counts) if total else (0.0,) * GRADE_COUNT
    return ClassDistribution(tuple(counts), fractions)


def load_manifest(csv_path, image_dir=None) -> Manifest:
    """Parse a manifest CSV; when ``image_dir`` is given, also verify that
    every referenced PNG exists (all missing files are listed)."""
    csv_path = Path(csv_path)
    with open(csv_path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{csv_path}: empty file, expected header "
                                f"{','.join(MANIFEST_HEADER)}") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{csv_path}: expected header {','.join(MANIFEST_HEADER)}, "
                                f"got {','.join(header)}")
        entries = []
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ManifestError(f"{csv_path}: row {row_no}: expected 2 fields, got {len(row)}")
            id_code = row[0].strip()
            raw = row[1].strip()
            try:
                diagnosis = int(raw)
            except ValueError:
                raise ManifestError(f"{csv_path}: row {row_no}: diagnosis {raw!r} "
                                    "is not an integer") from None
            if not 0 <= diagnosis < GRADE_COUNT:
                raise ManifestError(f"{csv_path}: row {row_no}: diagnosis {diagnosis} "
                                    f"out of range [0, {GRADE_COUNT - 1}]")
            if id_code in seen:
                raise ManifestError(f"{csv_path}: row {row_no}: duplicate id_code {id_code!r}")
            seen.add(id_code)
            entries.append((id_code, diagnosis))
    source_dir = Path(image_dir) if image_dir is not None else None
    if source_dir is not None:
        missing = [i for i, _ in entries if not (source_dir / f"{i}.png").is_file()]
        if missing:
            raise ManifestError(f"{csv_path}: missing image files in {source_dir}: {missing}")
    return Manifest(tuple(entries), source_dir)


def save_manifest(manifest: Manifest, csv_path) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(manifest.entries)


def stratified_split(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest]:
    """Split into (train, val).

    Stratified mode takes round(count * val_fraction) validation samples per
    class (at least 1 when the class has >= 2 samples), shuffled by the
    seeded generator; classes are processed in grade order. Entries keep
    manifest order inside each half. Unstratified mode applies the same rule
    to the whole manifest at once.
    """
    rng = Xoshiro256StarStar(spec.seed)

    def pick_val(indices: list[int]) -> set[int]:
        count = len(indices)
        n_val = int(round_half_away(count * spec.val_fraction))
        if count >= 2:
            n_val = max(n_val, 1)
        shuffled = list(indices)
        rng.shuffle(shuffled)
        return set(shuffled[:n_val])

    val_idx: set[int] = set()
    if spec.stratified:
        for g in range(GRADE_COUNT):
            cls = [i for i, (_, grade) in enumerate(manifest.entries) if grade == g]
            if not cls:
                raise ManifestError(f"stratified split: class {g} has no samples")
            val_idx |= pick_val(cls)
    else:
        val_idx = pick_val(list(range(len(manifest.entries))))
    train = tuple(e for i, e in enumerate(manifest.entries) if i not in val_idx)
    val = tuple(e for i, e in enumerate(manifest.entries) if i in val_idx)
    return (Manifest(train, manifest.source_dir), Manifest(val, manifest.source_dir))


# ---------------------------------------------------------------------------
# synthetic graded discs


def synth_image(grade: int, side: int, noise_sd: float, rng: Xoshiro256StarStar) -> np.ndarray:
    """One synthetic fundus-like image: a centered bright disc (radius
    0.4*side, base intensity 40 + 40*grade) on black, with ``grade`` dark
    square lesions (side/16, intensity base - 30) placed fully inside the
    disc, plus per-pixel Gaussian noise shared by all three channels.

    Draw order per image: lesion centers first (rejection sampling), then
    one noise value per pixel, row-major; no draws when noise_sd == 0.
    """
    if not 0 <= grade < GRADE_COUNT:
        raise ValueError(f"grade must be in [0, {GRADE_COUNT - 1}], got {grade}")
    if side < 16:
        raise ValueError(f"side must be >= 16, got {side}")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    center = (side - 1) / 2.0
    radius = 0.4 * side
    yy, xx = np.mgrid[0:side, 0:side]
    disc = (yy - center) ** 2 + (xx - center) ** 2 <= radius ** 2
    base = 40.0 + 40.0 * grade
    img = np.zeros((side, side), dtype=np.float64)
    img[disc] = base
    lesion = max(1, side // 16)
    for _ in range(grade):
        for _ in range(10000):
            cy = rng.randint_below(side)
            cx = rng.randint_below(side)
            y0, x0 = cy - lesion // 2, cx - lesion // 2
            y1, x1 = y0 + lesion - 1, x0 + lesion - 1
            corners_inside = all(
                (y - center) ** 2 + (x - center) ** 2 <= radius ** 2
                for y in (y0, y1) for x in (x0, x1))
            if corners_inside:
                img[y0:y1 + 1, x0:x1 + 1] = base - 30.0
                break
        else:
            raise RuntimeError("could not place a lesion inside the disc")
    if noise_sd > 0:
        img = img + noise_sd * rng.normal_array(side * side).reshape(side, side)
    gray = np.clip(round_half_away(img), 0, 255).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=2)


def synth_dataset(n_per_class: int, side: int = 64, noise_sd: float = 5.0,
                  seed: int = 42) -> list[tuple[np.ndarray, int]]:
    """Deterministic graded dataset: grade-major order, ``n_per_class`` images
    per grade, all from one seeded stream."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = Xoshiro256StarStar(seed)
    out = []
    for grade in range(GRADE_COUNT):
        for _ in range(n_per_class):
            out.append((synth_image(grade, side, noise_sd, rng), grade))
    return out


# ---------------------------------------------------------------------------
# PNG i/o


def _png_bit_depth(path) -> int:
    with open(path, "rb") as f:
        head = f.read(26)
    if len(head) < 26 or head[:8] != b"\x89PNG\r\n\x1a\n" or head[12:16] != b"IHDR":
        raise ValueError(f"{path}: not a PNG file")
    return head[24]


def load_png(path) -> np.ndarray:
    """Decode an 8-bit PNG to an RGB uint8 array; grayscale is promoted to
    RGB by channel replication. Other bit depths are rejected."""
    depth = _png_bit_depth(path)
    if depth != 8:
        raise ValueError(f"{path}: unsupported PNG bit depth {depth} (only 8-bit is supported)")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                return np.stack([arr, arr, arr], axis=2)
            if mode == "RGB":
                return np.asarray(im, dtype=np.uint8).copy()
            raise ValueError(f"{path}: unsupported PNG mode {mode!r} (expected RGB or grayscale)")
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"{path}: failed to decode PNG: {exc}") from exc


def save_png(img: np.ndarray, path) -> None:
    if img.dtype != np.uint8:
        raise ValueError("PNG output expects a uint8 array")
    if img.ndim == 2:
        Image.fromarray(img, mode="L").save(path, format="PNG")
    elif img.ndim == 3 and img.shape[2] == 3:
        Image.fromarray(img, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot encode array of shape {img.shape} as PNG")


def materialize_synth(out_dir, n_per_class: int, side: int = 64, noise_sd: float = 5.0,
                      seed: int = 42) -> Manifest:
    """Write a synthetic dataset to disk: PNGs plus manifest.csv."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    per_class_counter = [0] * GRADE_COUNT
    for img, grade in synth_dataset(n_per_class, side, noise_sd, seed):
        idx = per_class_counter[grade]
        per_class_counter[grade] += 1
        id_code = f"synth_g{grade}_{idx:04d}"
        save_png(img, images_dir / f"{id_code}.png")
        entries.append((id_code, grade))
    manifest = Manifest(tuple(entries), images_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# prediction CSVs


def read_predictions_csv(path) -> list[tuple[str, float]]:
    """Parse a prediction CSV (header id_code,score[,...]); extra columns
    such as the decoded grade are ignored."""
    path = Path(path)
    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty prediction file") from None
        cols = [h.strip() for h in header]
        if cols[:2] != PREDICTIONS_HEADER[:2]:
            raise ManifestError(f"{path}: expected header starting 'id_code,score', "
                                f"got {','.join(header)}")
        rows = []
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise ManifestError(f"{path}: row {row_no}: expected at least 2 fields")
            id_code = row[0].strip()
            if id_code in seen:
                raise ManifestError(f"{path}: row {row_no}: duplicate id_code {id_code!r}")
            seen.add(id_code)
            try:
                score = float(row[1])
            except ValueError:
                raise ManifestError(f"{path}: row {row_no}: score {row[1]!r} "
                                    "is not a number") from None
            if not math.isfinite(score):
                raise ManifestError(f"{path}: row {row_no}: score must be finite")
            rows.append((id_code, score))
    return rows


def write_predictions_csv(path, rows) -> None:
    """Write (id_code, score, grade) rows; scores use repr so they round-trip
    exactly."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(PREDICTIONS_HEADER) + "\n")
        for id_code, score, grade in rows:
            f.write(f"{id_code},{float(score)!r},{int(grade)}\n")
