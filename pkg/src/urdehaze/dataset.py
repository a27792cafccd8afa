"""Paired haze/clear ingestion: manifests, decoding, domain conversion.

A manifest is a plain tab-separated table, one `id<TAB>haze<TAB>clear`
line per pair. Images ride through the system as float64 numpy arrays
H x W x 3; the network domain is [-1, 1], linked to bytes by
v = b / 127.5 - 1 and its clamp-then-round inverse.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def to_unit_signed(byte_img):
    """Map byte values [0, 255] onto the network domain [-1, 1]."""
    return np.asarray(byte_img, dtype=np.float64) / 127.5 - 1.0


def to_bytes(unit_img):
    """Inverse of to_unit_signed: clamp to [-1, 1], rescale, round
    half-away-from-zero to uint8."""
    v = (np.clip(np.asarray(unit_img, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.floor(v + 0.5).astype(np.uint8)


def image_to_tensor(img, dtype=torch.float32):
    """H x W x 3 numpy array -> (1, 3, H, W) tensor."""
    arr = np.ascontiguousarray(np.transpose(np.asarray(img, dtype=np.float64), (2, 0, 1)))
    return torch.from_numpy(arr).unsqueeze(0).to(dtype)


def tensor_to_image(t):
    """(1, 3, H, W) or (3, H, W) tensor -> H x W x 3 float64 array."""
    if t.dim() == 4:
        t = t.squeeze(0)
    return t.detach().to(torch.float64).permute(1, 2, 0).numpy()


def read_image_bytes(path):
    """Decode an 8-bit image file to an H x W x 3 uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image_bytes(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)


@dataclass
class PairEntry:
    id: str
    haze_path: str
    clear_path: str


@dataclass
class PairManifest:
    entries: list
    split_tag: str = "train"

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self):
        return [e.id for e in self.entries]


def _list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory does not exist: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_manifest(haze_dir, clear_dir, match_rule="stem", seed=0, split_tag="train"):
    """Pair haze and clear files into a manifest.

    match_rule "stem": files pair by identical stem. Rule "prefix": many
    haze files named `<clearstem>_*` may exist per clear image; exactly
    one is chosen per clear image, deterministically from the seed.
    Unmatched haze files produce warnings; zero pairs is an error.
    """
    haze_files = _list_images(haze_dir)
    clear_files = _list_images(clear_dir)
    clear_by_stem = {p.stem: p for p in clear_files}
    entries = []
    if match_rule == "stem":
        unmatched = []
        for hp in haze_files:
            cp = clear_by_stem.get(hp.stem)
            if cp is None:
                unmatched.append(hp.name)
                continue
            entries.append(PairEntry(id=hp.stem, haze_path=str(hp), clear_path=str(cp)))
        for name in unmatched:
            log.warning("haze file %s has no clear mate; skipped", name)
    elif match_rule == "prefix":
        rng = np.random.default_rng(seed)
        candidates = {stem: [] for stem in clear_by_stem}
        for hp in haze_files:
            stem = hp.stem.split("_")[0]
            if stem in candidates:
                candidates[stem].append(hp)
            else:
                log.warning("haze file %s has no clear mate; skipped", hp.name)
        for stem in sorted(candidates):
            group = candidates[stem]
            if not group:
                continue
            hp = group[rng.integers(len(group))]
            entries.append(PairEntry(id=stem, haze_path=str(hp), clear_path=str(clear_by_stem[stem])))
    else:
        raise ValueError(f"unknown match_rule {match_rule!r} (expected 'stem' or 'prefix')")
    if not entries:
        raise ValueError(f"no haze/clear pairs found between {haze_dir} and {clear_dir}")
    return PairManifest(entries=entries, split_tag=split_tag)


def save_manifest(manifest: PairManifest, path):
    lines = [f"{e.id}\t{e.haze_path}\t{e.clear_path}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, split_tag="train"):
    entries = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields, got {len(parts)}")
        entries.append(PairEntry(id=parts[0], haze_path=parts[1], clear_path=parts[2]))
    if not entries:
        raise ValueError(f"manifest {path} is empty")
    return PairManifest(entries=entries, split_tag=split_tag)


def load_pair(entry: PairEntry):
    """Decode one pair to unit-signed arrays, checking the images agree
    in size."""
    try:
        haze = read_image_bytes(entry.haze_path)
        clear = read_image_bytes(entry.clear_path)
    except Exception as exc:
        raise ValueError(f"pair {entry.id}: failed to decode ({exc})") from exc
    if haze.shape != clear.shape:
        raise ValueError(
            f"pair {entry.id}: haze {haze.shape[:2]} and clear {clear.shape[:2]} differ in size"
        )
    return to_unit_signed(haze), to_unit_signed(clear)


def epoch_iter(manifest: PairManifest, seed, epoch):
    """Entries in a deterministic permutation keyed by (seed, epoch)."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch)])
    order = rng.permutation(len(manifest.entries))
    return [manifest.entries[i] for i in order]
