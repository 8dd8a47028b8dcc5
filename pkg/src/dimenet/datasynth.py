"""Synthetic paired low-light / backlit data and paired-directory ingestion."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DatasetError
from .imaging import IlluminationLabel, as_image, load_image, save_image

log = logging.getLogger(__name__)

LOWLIGHT_GAMMA = (1.5, 3.0)
LOWLIGHT_SCALE = (0.1, 0.4)
LOWLIGHT_NOISE = (0.01, 0.05)
BACKLIT_GAIN_HI = (1.5, 2.5)
BACKLIT_GAIN_LO = (0.1, 0.35)
MASK_BLUR = 0.1  # Gaussian sigma as a fraction of min(H, W)

MANIFEST_COLUMNS = ["id", "kind", "gamma", "scale", "noise", "g_hi", "g_lo", "mask",
                    "degraded_path", "clean_path"]


@dataclass
class DegradationSpec:
    kind: IlluminationLabel
    gamma: float = 1.0
    scale: float = 1.0
    noise: float = 0.0
    g_hi: float = 1.0
    g_lo: float = 1.0
    mask: str = ""
    smoothness: float = MASK_BLUR

    def manifest_fields(self) -> dict:
        if self.kind is IlluminationLabel.LowLight:
            return {"gamma": f"{self.gamma:.6f}", "scale": f"{self.scale:.6f}",
                    "noise": f"{self.noise:.6f}", "g_hi": "-", "g_lo": "-", "mask": "-"}
        return {"gamma": "-", "scale": "-", "noise": "-", "g_hi": f"{self.g_hi:.6f}",
                "g_lo": f"{self.g_lo:.6f}", "mask": self.mask}


@dataclass
class PairedSample:
    degraded: np.ndarray
    clean: np.ndarray
    label: IlluminationLabel | None = None
    spec: DegradationSpec | str = "real"
    name: str = ""


def pair_rng(seed: int, pair_id: int) -> np.random.Generator:
    """Independent random stream for one pair, derived from (seed, pair id)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(pair_id,)))


def sample_lowlight_spec(rng: np.random.Generator) -> DegradationSpec:
    return DegradationSpec(
        kind=IlluminationLabel.LowLight,
        gamma=float(rng.uniform(*LOWLIGHT_GAMMA)),
        scale=float(rng.uniform(*LOWLIGHT_SCALE)),
        noise=float(rng.uniform(*LOWLIGHT_NOISE)),
    )


def sample_backlit_spec(rng: np.random.Generator) -> DegradationSpec:
    return DegradationSpec(
        kind=IlluminationLabel.Backlit,
        g_hi=float(rng.uniform(*BACKLIT_GAIN_HI)),
        g_lo=float(rng.uniform(*BACKLIT_GAIN_LO)),
        mask="halfplane" if rng.random() < 0.5 else "radial",
    )


def degrade_lowlight(clean, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    clean = as_image(clean).astype(np.float64)
    out = spec.scale * clean ** spec.gamma
    if spec.noise > 0:
        out = out + rng.normal(0.0, spec.noise, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def backlit_mask(shape, kind: str, rng: np.random.Generator, smoothness: float = MASK_BLUR) -> np.ndarray:
    """Smooth mask in [0, 1]; 1 marks the bright (background) region."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    yy = (yy + 0.5) / h - 0.5
    xx = (xx + 0.5) / w - 0.5
    if kind == "halfplane":
        theta = rng.uniform(0.0, 2.0 * np.pi)
        offset = rng.uniform(-0.15, 0.15)
        hard = (np.cos(theta) * xx + np.sin(theta) * yy) > offset
    elif kind == "radial":
        cy, cx = rng.uniform(-0.15, 0.15, size=2)
        radius = rng.uniform(0.32, 0.45)
        hard = np.hypot(yy - cy, xx - cx) > radius  # dark subject, bright surround
    elif kind == "ones":
        return np.ones((h, w))
    elif kind == "zeros":
        return np.zeros((h, w))
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    mask = gaussian_filter(hard.astype(np.float64), sigma=smoothness * min(h, w), mode="nearest")
    return np.clip(mask, 0.0, 1.0)


def degrade_backlit(clean, spec: DegradationSpec, rng: np.random.Generator, mask=None) -> np.ndarray:
    clean = as_image(clean).astype(np.float64)
    if mask is None:
        mask = backlit_mask(clean.shape[:2], spec.mask, rng, spec.smoothness)
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    bright = np.clip(spec.g_hi * clean, 0.0, 1.0)
    dark = spec.g_lo * clean
    return np.clip(m * bright + (1.0 - m) * dark, 0.0, 1.0)


def synth_scene(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Procedural well-exposed scene: colored gradient, shapes and mild texture."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    c0, c1 = rng.uniform(0.35, 0.85, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)[..., None]
    img = (1 - t) * c0 + t * c1
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.25, 0.95, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        if rng.random() < 0.5:
            inside = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        img[inside] = color
    texture = gaussian_filter(rng.normal(0, 1, size=(h, w)), sigma=1.0)
    img = img + 0.04 * texture[..., None]
    return np.clip(img, 0.05, 1.0).astype(np.float32)


def make_pair(clean, kind: IlluminationLabel, rng: np.random.Generator) -> PairedSample:
    if kind is IlluminationLabel.LowLight:
        spec = sample_lowlight_spec(rng)
        degraded = degrade_lowlight(clean, spec, rng)
    elif kind is IlluminationLabel.Backlit:
        spec = sample_backlit_spec(rng)
        degraded = degrade_backlit(clean, spec, rng)
    else:
        raise ValueError(f"no synthetic degradation for {kind}")
    return PairedSample(degraded=degraded.astype(np.float32), clean=as_image(clean).astype(np.float32),
                        label=kind, spec=spec)


def synth_pairs(cleans, n_low: int, n_back: int, seed: int) -> list[PairedSample]:
    """In-memory equivalent of :func:`build_dataset`. Pair ``i`` uses clean image ``i % len(cleans)``."""
    if not len(cleans) and (n_low or n_back):
        raise DatasetError("no clean images supplied")
    kinds = [IlluminationLabel.LowLight] * n_low + [IlluminationLabel.Backlit] * n_back
    out = []
    for pid, kind in enumerate(kinds):
        sample = make_pair(cleans[pid % len(cleans)], kind, pair_rng(seed, pid))
        sample.name = f"{pid:05d}"
        out.append(sample)
    return out


def synth_scenes(n: int, size: int, seed: int) -> list[np.ndarray]:
    # scenes draw from a stream disjoint from the per-pair streams
    return [synth_scene(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 << 30, i))), size)
            for i in range(n)]


def list_pngs(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png" and p.is_file())


def build_dataset(clean_dir, n_low: int, n_back: int, seed: int, out_dir) -> list[dict]:
    """Write degraded/clean PNG pairs and ``manifest.tsv`` under ``out_dir``; return the rows."""
    if n_low < 0 or n_back < 0:
        raise ValueError("counts must be non-negative")
    clean_paths = list_pngs(clean_dir) if Path(clean_dir).is_dir() else []
    if not clean_paths:
        raise DatasetError(f"no PNG images in {clean_dir}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out_dir}: {exc}") from exc
    rows = []
    if n_low + n_back:
        (out_dir / "degraded").mkdir(exist_ok=True)
        (out_dir / "clean").mkdir(exist_ok=True)
        cleans = [load_image(p) for p in clean_paths]
        for sample in synth_pairs(cleans, n_low, n_back, seed):
            deg_rel = f"degraded/{sample.name}.png"
            clean_rel = f"clean/{sample.name}.png"
            save_image(sample.degraded, out_dir / deg_rel)
            save_image(sample.clean, out_dir / clean_rel)
            row = {"id": sample.name, "kind": sample.label.value, **sample.spec.manifest_fields(),
                   "degraded_path": deg_rel, "clean_path": clean_rel}
            rows.append(row)
            log.debug("pair %s %s", sample.name, row)
    write_manifest(rows, out_dir / "manifest.tsv")
    return rows


def write_manifest(rows, path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, delimiter="\t", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def load_manifest_dataset(root) -> list[PairedSample]:
    """Load a directory written by :func:`build_dataset`."""
    root = Path(root)
    out = []
    for row in read_manifest(root / "manifest.tsv"):
        out.append(PairedSample(
            degraded=load_image(root / row["degraded_path"]),
            clean=load_image(root / row["clean_path"]),
            label=IlluminationLabel(row["kind"]),
            spec="manifest",
            name=row["id"],
        ))
    return out


@dataclass
class PairReport:
    samples: list = field(default_factory=list)
    orphans: list = field(default_factory=list)
    size_mismatch: list = field(default_factory=list)


def load_paired_dir(degraded_dir, clean_dir) -> PairReport:
    """Match PNGs across two directories by filename.

    Orphans and size-mismatched pairs are reported, not raised; an empty match
    or duplicate stems (e.g. ``a.png`` and ``a.PNG``) are errors.
    """
    deg = list_pngs(degraded_dir)
    cln = list_pngs(clean_dir)
    report = PairReport()
    by_stem = {}
    for p in cln:
        key = p.stem.lower()
        if key in by_stem:
            raise DatasetError(f"ambiguous duplicate clean files: {by_stem[key].name}, {p.name}")
        by_stem[key] = p
    seen = set()
    for p in deg:
        key = p.stem.lower()
        if key in seen:
            raise DatasetError(f"ambiguous duplicate degraded file: {p.name}")
        seen.add(key)
        match = by_stem.get(key)
        if match is None:
            report.orphans.append(str(p))
            continue
        d, c = load_image(p), load_image(match)
        if d.shape != c.shape:
            report.size_mismatch.append(f"{p.name}: {d.shape[:2]} vs {c.shape[:2]}")
            continue
        report.samples.append(PairedSample(degraded=d, clean=c, spec="real", name=p.stem))
    report.orphans.extend(str(p) for k, p in by_stem.items() if k not in seen)
    if not report.samples:
        raise DatasetError(f"no matching pairs between {degraded_dir} and {clean_dir}")
    for line in report.orphans:
        log.warning("unmatched file %s", line)
    for line in report.size_mismatch:
        log.warning("size mismatch %s", line)
    return report
