"""Encode an image folder plus class prompts into TFB embedding files.

Expects ``image_root/<class_name>/<image>`` layout, one subdirectory per
class named in the class-names file (whose order defines class indices).
Writes ``train.tfb``, ``test.tfb``, ``text.tfb``, ``manifest.tsv``, and
``classes.txt`` into the output directory; every row is L2-normalized and
the encoder id is recorded in a manifest comment.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import EncoderError, make_encoder
from .tfb import write_class_names, write_manifest, write_tfb

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp")
DEFAULT_TEMPLATE = "a photo of a [CLASS]"


@dataclass(frozen=True)
class ExtractionJob:
    image_root: Path
    class_names_file: Path
    output_dir: Path
    encoder: str = "toy:64"
    prompt_template: str = DEFAULT_TEMPLATE
    split_rule: str = "all-train"  # all-train | all-test | fraction:<train-share>
    seed: int = 0

    def validate(self) -> "ExtractionJob":
        if "[CLASS]" not in self.prompt_template:
            raise ValueError("prompt template must contain the [CLASS] placeholder")
        rule = self.split_rule
        if rule not in ("all-train", "all-test"):
            if not rule.startswith("fraction:"):
                raise ValueError(f"unknown split rule {rule!r}")
            share = float(rule.split(":", 1)[1])
            if not (0.0 <= share <= 1.0):
                raise ValueError(f"train share must lie in [0, 1], got {share}")
        return self


def load_class_names(path: Path) -> list[str]:
    names = [line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n.strip()]
    if not names:
        raise ValueError(f"{path}: class-names file is empty")
    return names


def assign_split(job: ExtractionJob, sample_id: str) -> str:
    if job.split_rule == "all-train":
        return "train"
    if job.split_rule == "all-test":
        return "test"
    share = float(job.split_rule.split(":", 1)[1])
    digest = hashlib.sha256(f"{job.seed}:{sample_id}".encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "little") / 2**64
    return "train" if bucket < share else "test"


def _l2(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise EncoderError("encoder produced a zero-norm feature row")
    return rows / norms


def collect_images(job: ExtractionJob, class_names: list[str]):
    """(sample_id, class_index, path) for every decodable-looking file, sorted."""
    found = []
    for index, name in enumerate(class_names):
        class_dir = job.image_root / name
        if not class_dir.is_dir():
            log.warning("class directory missing: %s", class_dir)
            continue
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            log.warning("class %r has no images", name)
        for path in files:
            found.append((f"{name}/{path.name}", index, path))
    return found


def extract(job: ExtractionJob) -> dict:
    """Run the extraction; returns a summary dict (counts, dim, output paths)."""
    job.validate()
    class_names = load_class_names(job.class_names_file)
    encoder = make_encoder(job.encoder)
    from PIL import Image, UnidentifiedImageError

    records = []  # (sample_id, class_index, split, PIL image)
    skipped = 0
    for sample_id, class_index, path in collect_images(job, class_names):
        try:
            with Image.open(path) as img:
                img.load()
                image = img.convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping undecodable image %s: %s", path, exc)
            skipped += 1
            continue
        records.append((sample_id, class_index, assign_split(job, sample_id), image))
    if not records:
        raise ValueError(f"no decodable images under {job.image_root}")

    features = _l2(encoder.encode_images([r[3] for r in records]))
    prompts = [job.prompt_template.replace("[CLASS]", name) for name in class_names]
    text = _l2(encoder.encode_texts(prompts))
    if text.shape != (len(class_names), features.shape[1]):
        raise EncoderError(
            f"text features {text.shape} do not match "
            f"{len(class_names)} classes x d={features.shape[1]}"
        )

    splits = {"train": [], "test": []}
    for row, (sample_id, class_index, split, _) in enumerate(records):
        splits[split].append(row)
    manifest = [(records[row][0], split, records[row][1])
                for split in ("train", "test") for row in splits[split]]
    if len({sid for sid, _, _ in manifest}) != len(records):
        raise ValueError("duplicate sample ids; image layout must be one file per id")

    out = Path(job.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        rows = splits[split]
        write_tfb(out / f"{split}.tfb", features[rows], [records[r][0] for r in rows])
    write_tfb(out / "text.tfb", text, class_names)
    write_manifest(
        out / "manifest.tsv", manifest,
        comment=f"encoder={job.encoder} template={job.prompt_template!r} "
                f"split={job.split_rule} seed={job.seed}",
    )
    write_class_names(out / "classes.txt", class_names)
    return {
        "train_rows": len(splits["train"]),
        "test_rows": len(splits["test"]),
        "classes": len(class_names),
        "dim": int(features.shape[1]),
        "skipped": skipped,
        "output_dir": str(out),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image-root", type=Path, required=True)
    parser.add_argument("--class-names", type=Path, required=True)
    parser.add_argument("--output-dir", type=Path, required=True)
    parser.add_argument("--encoder", default="toy:64",
                        help="toy:<dim> or a HuggingFace CLIP model id")
    parser.add_argument("--template", default=DEFAULT_TEMPLATE)
    parser.add_argument("--split-rule", default="all-train",
                        help="all-train | all-test | fraction:<train-share>")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    job = ExtractionJob(
        image_root=args.image_root,
        class_names_file=args.class_names,
        output_dir=args.output_dir,
        encoder=args.encoder,
        prompt_template=args.template,
        split_rule=args.split_rule,
        seed=args.seed,
    )
    try:
        summary = extract(job)
    except (EncoderError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {summary['train_rows']} train / {summary['test_rows']} test rows, "
        f"{summary['classes']} text rows (d={summary['dim']}, "
        f"{summary['skipped']} skipped) to {summary['output_dir']}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
