"""Radiologist annotation parsing, consolidation, labeling and splits.

Reads per-radiologist nodule marks from a simplified LIDC-style XML schema
(or a per-read CSV), matches them against a LUNA16-style reference nodule
list, averages malignancy scores over matched reads, maps averaged scores to
the discrete class schemes, and produces subject-grouped stratified splits.
"""

from __future__ import annotations

import csv
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, StratificationWarning, ValidationError

MIN_READS = 3  # a nodule needs at least this many radiologist reads


@dataclass
class RadiologistRead:
    scan_id: str
    reader_id: str
    centroid_world: tuple[float, float, float]  # mm, (z, y, x)
    malignancy: int

    def __post_init__(self):
        if self.malignancy not in (1, 2, 3, 4, 5):
            raise ValidationError(
                f"malignancy must be in 1..5, got {self.malignancy} "
                f"(scan {self.scan_id}, reader {self.reader_id})"
            )


@dataclass
class ReferenceNodule:
    """LUNA16-style reference entry: world center and diameter in mm."""

    scan_id: str
    centroid_world: tuple[float, float, float]
    diameter: float


@dataclass
class NoduleAnnotation:
    scan_id: str
    centroid_world: tuple[float, float, float]
    diameter: float
    scores: list[int]
    mean_score: float = field(init=False)

    def __post_init__(self):
        if len(self.scores) < MIN_READS:
            raise ValidationError(f"need >= {MIN_READS} scores, got {len(self.scores)}")
        self.mean_score = float(np.mean(self.scores))


EXCLUDED = "excluded"
SCHEME_CLASSES = {"145": ("1", "4", "5"), "1and245": ("1and2", "4", "5")}


@dataclass
class LabeledNodule:
    annotation: NoduleAnnotation
    label: str

    @property
    def scan_id(self) -> str:
        return self.annotation.scan_id


@dataclass
class DatasetSplit:
    train_scan_ids: list[str]
    val_scan_ids: list[str]
    seed: int


def parse_lidc_xml(source) -> list[RadiologistRead]:
    """Extract one RadiologistRead per (reader, nodule) from a document.

    ``source`` is a path or file-like object.  Expected layout::

        <annotations scanId="..." originX="..mm" originY="..mm"
                     spacingX="..mm" spacingY="..mm">
          <readingSession reader="...">
            <unblindedReadNodule>
              <noduleID>..</noduleID>
              <characteristics><malignancy>1..5</malignancy></characteristics>
              <roi>
                <imageZposition>..mm</imageZposition>
                <edgeMap><xCoord>px</xCoord><yCoord>px</yCoord></edgeMap>*
              </roi>*
            </unblindedReadNodule>*
          </readingSession>*
        </annotations>

    The nodule centroid is the mean of all edge coordinates over all ROIs,
    with pixel x/y mapped to world mm through the header origin/spacing and
    imageZposition taken as world mm directly.  Nodules without a
    characteristics/malignancy block (lesions < 3 mm) are skipped.
    """
    try:
        tree = ET.parse(source)
    except ET.ParseError as exc:
        raise ParseError(f"malformed annotation XML: {exc}") from exc
    root = tree.getroot()
    scan_id = root.get("scanId", "")
    try:
        origin_x = float(root.get("originX", "0"))
        origin_y = float(root.get("originY", "0"))
        spacing_x = float(root.get("spacingX", "1"))
        spacing_y = float(root.get("spacingY", "1"))
    except ValueError as exc:
        raise ParseError(f"non-numeric geometry attribute on <{root.tag}>: {exc}") from exc

    reads = []
    for session in root.iter("readingSession"):
        reader_id = session.get("reader", "")
        for nodule in session.iter("unblindedReadNodule"):
            malignancy_el = nodule.find("characteristics/malignancy")
            if malignancy_el is None:
                continue  # lesion < 3 mm, no characterization
            try:
                malignancy = int(malignancy_el.text.strip())
            except (TypeError, ValueError) as exc:
                raise ParseError(
                    f"non-integer malignancy in nodule "
                    f"{nodule.findtext('noduleID', '?')}: {malignancy_el.text!r}"
                ) from exc
            xs, ys, zs = [], [], []
            for roi in nodule.iter("roi"):
                z_text = roi.findtext("imageZposition")
                if z_text is None:
                    raise ParseError(
                        f"roi without imageZposition in nodule "
                        f"{nodule.findtext('noduleID', '?')}"
                    )
                z_mm = float(z_text)
                for edge in roi.iter("edgeMap"):
                    try:
                        xs.append(float(edge.findtext("xCoord")))
                        ys.append(float(edge.findtext("yCoord")))
                    except (TypeError, ValueError) as exc:
                        raise ParseError(f"bad edgeMap coordinate: {exc}") from exc
                    zs.append(z_mm)
            if not xs:
                continue
            centroid = (
                float(np.mean(zs)),
                origin_y + float(np.mean(ys)) * spacing_y,
                origin_x + float(np.mean(xs)) * spacing_x,
            )
            reads.append(RadiologistRead(scan_id, reader_id, centroid, malignancy))
    return reads


def read_reads_csv(path: str) -> list[RadiologistRead]:
    """Per-radiologist score CSV: scan_id, reader_id, z, y, x, malignancy."""
    reads = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            reads.append(
                RadiologistRead(
                    row["scan_id"],
                    row["reader_id"],
                    (float(row["z"]), float(row["y"]), float(row["x"])),
                    int(row["malignancy"]),
                )
            )
    return reads


def read_reference_csv(path: str) -> list[ReferenceNodule]:
    """LUNA16-style reference CSV: seriesuid, coordX, coordY, coordZ, diameter_mm."""
    nodules = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            nodules.append(
                ReferenceNodule(
                    row["seriesuid"],
                    (float(row["coordZ"]), float(row["coordY"]), float(row["coordX"])),
                    float(row["diameter_mm"]),
                )
            )
    return nodules


def consolidate(
    reads: list[RadiologistRead], reference: list[ReferenceNodule]
) -> tuple[list[NoduleAnnotation], list[RadiologistRead]]:
    """Match reads to reference nodules and average malignancy per nodule.

    A read matches a reference nodule when their centroid distance is below
    the reference diameter / 2 (the LUNA16 hit criterion); ambiguous reads go
    to the closest nodule.  Nodules with at least three matched reads become
    annotations.  Returns (annotations, unmatched reads).
    """
    matched_scores: dict[int, list[int]] = {i: [] for i in range(len(reference))}
    unmatched = []
    for read in reads:
        best_idx, best_dist = None, np.inf
        for idx, ref in enumerate(reference):
            if ref.scan_id != read.scan_id:
                continue
            dist = float(
                np.linalg.norm(
                    np.asarray(read.centroid_world) - np.asarray(ref.centroid_world)
                )
            )
            if dist < ref.diameter / 2 and dist < best_dist:
                best_idx, best_dist = idx, dist
        if best_idx is None:
            unmatched.append(read)
        else:
            matched_scores[best_idx].append(read.malignancy)
    annotations = [
        NoduleAnnotation(ref.scan_id, ref.centroid_world, ref.diameter, scores)
        for (idx, scores), ref in zip(sorted(matched_scores.items()), reference)
        if len(scores) >= MIN_READS
    ]
    return annotations, unmatched


def assign_class(mean_score: float, scheme: str = "145") -> str:
    """Map an averaged malignancy score to a class label or EXCLUDED.

    The score is rounded half-up to the nearest integer; scheme '145' keeps
    1/4/5, scheme '1and245' merges 1 and 2 into '1and2'; everything else
    (class 3, and class 2 under '145') is excluded.
    """
    if scheme not in SCHEME_CLASSES:
        raise ValidationError(f"unknown scheme {scheme!r}")
    if not 1.0 <= mean_score <= 5.0:
        raise ValidationError(f"mean score must lie in [1, 5], got {mean_score}")
    rounded = int(np.floor(mean_score + 0.5))
    if scheme == "145":
        mapping = {1: "1", 4: "4", 5: "5"}
    else:
        mapping = {1: "1and2", 2: "1and2", 4: "4", 5: "5"}
    return mapping.get(rounded, EXCLUDED)


def label_nodules(annotations: list[NoduleAnnotation], scheme: str) -> list[LabeledNodule]:
    """Assign classes and drop excluded nodules."""
    out = []
    for ann in annotations:
        label = assign_class(ann.mean_score, scheme)
        if label != EXCLUDED:
            out.append(LabeledNodule(ann, label))
    return out


def split_stratified(
    nodules: list, train_frac: float = 0.6, seed: int = 0
) -> DatasetSplit:
    """Subject-grouped stratified split of labeled nodules.

    ``nodules`` is any sequence of objects with ``scan_id`` and ``label``
    attributes (or (scan_id, label) pairs).  All nodules of a subject land on
    the same side.  Subjects are greedily assigned (largest first, tie order
    shuffled by seed) to the side that most reduces the per-class deviation
    from the target fractions; a local-improvement pass then moves subjects
    across while this reduces the deviation further.
    """
    pairs = []
    for nod in nodules:
        if hasattr(nod, "scan_id"):
            pairs.append((nod.scan_id, nod.label))
        else:
            pairs.append((nod[0], nod[1]))
    classes = sorted({label for _, label in pairs})
    class_idx = {label: i for i, label in enumerate(classes)}
    subjects: dict[str, np.ndarray] = {}
    for scan_id, label in pairs:
        subjects.setdefault(scan_id, np.zeros(len(classes)))[class_idx[label]] += 1

    totals = np.sum(list(subjects.values()), axis=0)
    for label in classes:
        per_subject = [v[class_idx[label]] for v in subjects.values()]
        if totals[class_idx[label]] > 0 and max(per_subject) == totals[class_idx[label]]:
            warnings.warn(
                f"class {label!r} has all nodules on a single subject; "
                "stratification is degenerate",
                StratificationWarning,
            )

    rng = np.random.default_rng(seed)
    names = sorted(subjects)
    rng.shuffle(names)
    names.sort(key=lambda n: -subjects[n].sum(), reverse=False)  # stable: largest first
    target = totals * train_frac

    train: set[str] = set()
    counts = np.zeros(len(classes))

    def deviation(vec):
        return float(np.abs(vec - target).sum())

    for name in names:
        if deviation(counts + subjects[name]) <= deviation(counts):
            train.add(name)
            counts += subjects[name]
    # local improvement: move subjects across while it reduces the deviation
    improved = True
    while improved:
        improved = False
        for name in names:
            if name in train:
                candidate = counts - subjects[name]
            else:
                candidate = counts + subjects[name]
            if deviation(candidate) < deviation(counts) - 1e-12:
                counts = candidate
                train.symmetric_difference_update({name})
                improved = True
    val = [n for n in sorted(subjects) if n not in train]
    return DatasetSplit(sorted(train), val, seed)
