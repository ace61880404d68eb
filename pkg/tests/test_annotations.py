import io
import warnings

import numpy as np
import pytest

from lungpipe.annotations import (
    EXCLUDED,
    NoduleAnnotation,
    RadiologistRead,
    ReferenceNodule,
    assign_class,
    consolidate,
    label_nodules,
    parse_lidc_xml,
    read_reads_csv,
    read_reference_csv,
    split_stratified,
)
from lungpipe.errors import ParseError, StratificationWarning, ValidationError

XML_DOC = """<?xml version="1.0"?>
<annotations scanId="scan-1" originX="-150.0" originY="-140.0" spacingX="0.5" spacingY="0.5">
  <readingSession reader="r1">
    <unblindedReadNodule>
      <noduleID>n1</noduleID>
      <characteristics><malignancy>4</malignancy></characteristics>
      <roi>
        <imageZposition>-100.0</imageZposition>
        <edgeMap><xCoord>100</xCoord><yCoord>200</yCoord></edgeMap>
        <edgeMap><xCoord>104</xCoord><yCoord>204</yCoord></edgeMap>
      </roi>
      <roi>
        <imageZposition>-98.0</imageZposition>
        <edgeMap><xCoord>102</xCoord><yCoord>202</yCoord></edgeMap>
        <edgeMap><xCoord>102</xCoord><yCoord>202</yCoord></edgeMap>
      </roi>
    </unblindedReadNodule>
    <unblindedReadNodule>
      <noduleID>small</noduleID>
      <roi>
        <imageZposition>-50.0</imageZposition>
        <edgeMap><xCoord>10</xCoord><yCoord>10</yCoord></edgeMap>
      </roi>
    </unblindedReadNodule>
  </readingSession>
  <readingSession reader="r2">
    <unblindedReadNodule>
      <noduleID>n1</noduleID>
      <characteristics><malignancy>5</malignancy></characteristics>
      <roi>
        <imageZposition>-99.0</imageZposition>
        <edgeMap><xCoord>102</xCoord><yCoord>202</yCoord></edgeMap>
      </roi>
    </unblindedReadNodule>
  </readingSession>
</annotations>
"""


class TestParseXml:
    def test_extracts_reads_with_world_centroids(self):
        reads = parse_lidc_xml(io.StringIO(XML_DOC))
        assert len(reads) == 2  # the uncharacterized small lesion is skipped
        first = reads[0]
        assert first.scan_id == "scan-1"
        assert first.reader_id == "r1"
        assert first.malignancy == 4
        # mean x pixel = 102 -> -150 + 102*0.5 = -99; mean y = 202 -> -39
        assert first.centroid_world == pytest.approx((-99.0, -39.0, -99.0))

    def test_second_reader_read(self):
        reads = parse_lidc_xml(io.StringIO(XML_DOC))
        assert reads[1].reader_id == "r2"
        assert reads[1].malignancy == 5

    def test_malformed_xml_raises(self):
        with pytest.raises(ParseError, match="malformed"):
            parse_lidc_xml(io.StringIO("<annotations><broken"))

    def test_non_integer_malignancy_raises(self):
        doc = XML_DOC.replace("<malignancy>4</malignancy>", "<malignancy>high</malignancy>")
        with pytest.raises(ParseError, match="malignancy"):
            parse_lidc_xml(io.StringIO(doc))

    def test_out_of_range_malignancy_raises(self):
        with pytest.raises(ValidationError, match="1..5"):
            RadiologistRead("s", "r", (0, 0, 0), 7)


class TestCsvReaders:
    def test_reads_csv(self, tmp_path):
        path = tmp_path / "reads.csv"
        path.write_text(
            "scan_id,reader_id,z,y,x,malignancy\n"
            "s1,r1,10.0,20.0,30.0,4\n"
            "s1,r2,10.5,20.5,30.5,5\n"
        )
        reads = read_reads_csv(str(path))
        assert len(reads) == 2
        assert reads[0].centroid_world == (10.0, 20.0, 30.0)

    def test_reference_csv_maps_xyz_to_zyx(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ,diameter_mm\ns1,1.0,2.0,3.0,8.0\n")
        ref = read_reference_csv(str(path))
        assert ref[0].centroid_world == (3.0, 2.0, 1.0)
        assert ref[0].diameter == 8.0


class TestConsolidate:
    def reads_at(self, scan, center, scores):
        return [
            RadiologistRead(scan, f"r{i}", tuple(np.add(center, 0.1 * i)), s)
            for i, s in enumerate(scores)
        ]

    def test_averages_matched_reads(self):
        ref = [ReferenceNodule("s1", (10.0, 20.0, 30.0), 10.0)]
        reads = self.reads_at("s1", (10.0, 20.0, 30.0), [3, 4, 5, 4])
        annotations, unmatched = consolidate(reads, ref)
        assert not unmatched
        assert len(annotations) == 1
        assert annotations[0].mean_score == pytest.approx(4.0)

    def test_far_reads_are_unmatched(self):
        ref = [ReferenceNodule("s1", (10.0, 20.0, 30.0), 10.0)]
        reads = self.reads_at("s1", (80.0, 20.0, 30.0), [4, 4, 4])
        annotations, unmatched = consolidate(reads, ref)
        assert not annotations
        assert len(unmatched) == 3

    def test_fewer_than_three_reads_is_dropped(self):
        ref = [ReferenceNodule("s1", (10.0, 20.0, 30.0), 10.0)]
        reads = self.reads_at("s1", (10.0, 20.0, 30.0), [4, 4])
        annotations, _ = consolidate(reads, ref)
        assert not annotations

    def test_read_goes_to_closest_nodule(self):
        ref = [
            ReferenceNodule("s1", (10.0, 20.0, 30.0), 12.0),
            ReferenceNodule("s1", (14.0, 20.0, 30.0), 12.0),
        ]
        reads = self.reads_at("s1", (13.5, 20.0, 30.0), [4, 4, 4])
        annotations, _ = consolidate(reads, ref)
        assert len(annotations) == 1
        assert annotations[0].centroid_world == (14.0, 20.0, 30.0)

    def test_scan_ids_never_cross(self):
        ref = [ReferenceNodule("s2", (10.0, 20.0, 30.0), 10.0)]
        reads = self.reads_at("s1", (10.0, 20.0, 30.0), [4, 4, 4])
        annotations, unmatched = consolidate(reads, ref)
        assert not annotations and len(unmatched) == 3


class TestAssignClass:
    def test_scheme_145_keeps_1_4_5(self):
        assert assign_class(1.0, "145") == "1"
        assert assign_class(4.2, "145") == "4"
        assert assign_class(4.8, "145") == "5"

    def test_rounding_is_half_up(self):
        assert assign_class(3.5, "145") == "4"
        assert assign_class(4.5, "145") == "5"
        assert assign_class(3.49, "145") == EXCLUDED

    def test_class_3_is_excluded_everywhere(self):
        assert assign_class(3.0, "145") == EXCLUDED
        assert assign_class(3.0, "1and245") == EXCLUDED

    def test_class_2_merges_only_under_1and245(self):
        assert assign_class(2.0, "145") == EXCLUDED
        assert assign_class(2.0, "1and245") == "1and2"
        assert assign_class(1.4, "1and245") == "1and2"

    def test_out_of_range_raises(self):
        with pytest.raises(ValidationError):
            assign_class(0.5, "145")
        with pytest.raises(ValidationError):
            assign_class(5.5, "145")

    def test_unknown_scheme_raises(self):
        with pytest.raises(ValidationError):
            assign_class(4.0, "bogus")

    def test_label_nodules_drops_excluded(self):
        ann = [
            NoduleAnnotation("s1", (0, 0, 0), 8.0, [1, 1, 1]),
            NoduleAnnotation("s1", (0, 0, 0), 8.0, [3, 3, 3]),
            NoduleAnnotation("s2", (0, 0, 0), 8.0, [5, 5, 4]),
        ]
        labeled = label_nodules(ann, "145")
        assert [n.label for n in labeled] == ["1", "5"]


def table_shaped_nodules(seed=0):
    """Nodules with the 72/213/48 class distribution over 247 subjects."""
    rng = np.random.default_rng(seed)
    counts = {"1": 72, "4": 213, "5": 48}
    nodules = []
    subject = 0
    for label, count in counts.items():
        remaining = count
        while remaining:
            take = min(int(rng.integers(1, 4)), remaining)
            for _ in range(take):
                nodules.append((f"subj{subject:04d}", label))
            subject += 1
            remaining -= take
    return nodules


class TestSplitStratified:
    def test_no_subject_crosses_the_split(self):
        nodules = table_shaped_nodules()
        split = split_stratified(nodules, train_frac=0.6, seed=1)
        assert not set(split.train_scan_ids) & set(split.val_scan_ids)
        all_ids = {scan for scan, _ in nodules}
        assert set(split.train_scan_ids) | set(split.val_scan_ids) == all_ids

    def test_train_class_counts_near_target(self):
        nodules = table_shaped_nodules()
        for seed in range(20):
            split = split_stratified(nodules, train_frac=0.6, seed=seed)
            train = set(split.train_scan_ids)
            counts = {"1": 0, "4": 0, "5": 0}
            for scan, label in nodules:
                if scan in train:
                    counts[label] += 1
            assert abs(counts["1"] - 0.6 * 72) <= 1
            assert abs(counts["4"] - 0.6 * 213) <= 1
            assert abs(counts["5"] - 0.6 * 48) <= 1

    def test_deterministic_given_seed(self):
        nodules = table_shaped_nodules()
        a = split_stratified(nodules, seed=5)
        b = split_stratified(nodules, seed=5)
        assert a.train_scan_ids == b.train_scan_ids

    def test_single_subject_class_warns(self):
        nodules = [("s1", "4"), ("s1", "4"), ("s2", "1"), ("s3", "1"), ("s4", "1")]
        with pytest.warns(StratificationWarning):
            split_stratified(nodules, seed=0)

    def test_accepts_objects_with_attributes(self):
        ann = NoduleAnnotation("s1", (0, 0, 0), 8.0, [4, 4, 4])
        labeled = label_nodules([ann], "145")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StratificationWarning)
            split = split_stratified(labeled + [("s2", "1"), ("s3", "1")], seed=0)
        assert set(split.train_scan_ids) | set(split.val_scan_ids) == {"s1", "s2", "s3"}
