import itertools
import json

import numpy as np
import pytest

from domainbench.dataset import (
    AnnotationSet,
    CategoryEntry,
    CategoryTable,
    DatasetManifest,
    DomainRecord,
    StyleIngest,
    amplify,
    export_voc,
    load_annotations,
    load_voc,
    mix_seed,
    sample_for_domain,
    split_categories,
)
from domainbench.errors import (
    InvalidBoxError,
    MalformedAnnotationsError,
    ManifestError,
    UnknownCategoryError,
)
from domainbench.imaging import DegradationKind, DegradationSpec, load_image

from conftest import make_lvis_doc, make_taxonomy_doc, tiny_categories, write_json


class TestLoadAnnotations:
    def test_tiny_fixture_parses(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        assert len(anns) == 3
        assert len(table) == 3
        assert table.bucket_counts() == {"frequent": 1, "common": 1, "rare": 1}

    def test_empty_file_is_valid(self, tmp_path):
        path = write_json(tmp_path / "empty.json", make_lvis_doc([], [], []))
        anns, table = load_annotations(path)
        assert len(anns) == 0 and len(table) == 0

    def test_zero_width_box_reports_annotation_id(self, tmp_path):
        doc = make_lvis_doc(
            [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
            [{"id": 77, "image_id": 1, "bbox": [1, 1, 0, 5], "category_id": 1}],
            tiny_categories(),
        )
        with pytest.raises(InvalidBoxError) as err:
            load_annotations(write_json(tmp_path / "bad.json", doc))
        assert 77 in err.value.ids

    def test_out_of_bounds_box_rejected(self, tmp_path):
        doc = make_lvis_doc(
            [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
            [{"id": 5, "image_id": 1, "bbox": [6, 6, 5, 2], "category_id": 1}],
            tiny_categories(),
        )
        with pytest.raises(InvalidBoxError):
            load_annotations(write_json(tmp_path / "oob.json", doc))

    def test_unknown_category_reference(self, tmp_path):
        doc = make_lvis_doc(
            [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
            [{"id": 9, "image_id": 1, "bbox": [1, 1, 2, 2], "category_id": 404}],
            tiny_categories(),
        )
        with pytest.raises(UnknownCategoryError) as err:
            load_annotations(write_json(tmp_path / "unk.json", doc))
        assert 9 in err.value.ids

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(MalformedAnnotationsError):
            load_annotations(path)

    def test_missing_top_level_key(self, tmp_path):
        path = write_json(tmp_path / "nokeys.json", {"images": [], "annotations": []})
        with pytest.raises(MalformedAnnotationsError):
            load_annotations(path)

    def test_coco_url_fallback_and_lvis_buckets(self, tmp_path):
        doc = make_taxonomy_doc()
        path = write_json(tmp_path / "taxonomy.json", doc)
        anns, table = load_annotations(path)
        assert len(table) == 1203
        assert table.bucket_counts() == {"frequent": 405, "common": 461, "rare": 337}
        assert anns.image(1).file_name.endswith(".jpg")

    def test_exclude_list(self, tiny_dataset):
        anns, _ = load_annotations(tiny_dataset["annotations"], exclude_image_ids={2})
        assert anns.image_ids() == [1, 3]
        assert all(a.image_id != 2 for a in anns.annotations)

    def test_duplicate_annotation_ids(self, tmp_path):
        doc = make_lvis_doc(
            [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
            [
                {"id": 1, "image_id": 1, "bbox": [0, 0, 2, 2], "category_id": 1},
                {"id": 1, "image_id": 1, "bbox": [1, 1, 2, 2], "category_id": 1},
            ],
            tiny_categories(),
        )
        with pytest.raises(MalformedAnnotationsError):
            load_annotations(write_json(tmp_path / "dup.json", doc))


class TestSplitCategories:
    def test_partition_on_taxonomy(self):
        entries = [
            CategoryEntry(i, f"c{i}", bucket)
            for i, bucket in enumerate(["frequent"] * 4 + ["common"] * 3 + ["rare"] * 2, start=1)
        ]
        table = CategoryTable(entries)
        base, novel = split_categories(table)
        assert len(base) == 7 and len(novel) == 2
        assert base | novel == {e.id for e in entries}
        assert base & novel == set()

    def test_empty_table(self):
        base, novel = split_categories(CategoryTable([]))
        assert base == set() and novel == set()

    def test_three_category_toy(self):
        table = CategoryTable(
            [CategoryEntry(1, "a", "frequent"), CategoryEntry(2, "b", "common"), CategoryEntry(3, "c", "rare")]
        )
        base, novel = split_categories(table)
        assert base == {1, 2} and novel == {3}


class TestSampling:
    def _toy(self, tmp_path):
        images = [{"id": i, "file_name": f"{i}.png", "width": 20, "height": 20} for i in (1, 2, 3, 4)]
        cats_of = {1: [1], 2: [2], 3: [1, 2], 4: [2, 3]}
        annotations = [
            {"id": 10 * i + j, "image_id": i, "bbox": [0, 0, 5, 5], "category_id": c}
            for i, cs in cats_of.items()
            for j, c in enumerate(cs)
        ]
        path = write_json(tmp_path / "toy.json", make_lvis_doc(images, annotations, tiny_categories()))
        anns, _ = load_annotations(path)
        return anns, cats_of

    def test_greedy_matches_brute_force_prefixes(self, tmp_path):
        anns, cats_of = self._toy(tmp_path)
        selection = sample_for_domain(anns, 2, seed=0)
        for k in range(1, 3):
            greedy_cover = len(set().union(*(set(cats_of[i]) for i in selection[:k])))
            best = max(
                len(set().union(*(set(cats_of[i]) for i in combo)))
                for combo in itertools.combinations(cats_of, k)
            )
            assert greedy_cover == best
        assert selection == [3, 4]  # tie at gain 2 broken by ascending id

    def test_exhaustive_when_n_covers_all(self, tmp_path):
        anns, _ = self._toy(tmp_path)
        assert sorted(sample_for_domain(anns, 4, seed=1)) == [1, 2, 3, 4]
        assert sorted(sample_for_domain(anns, 99, seed=1)) == [1, 2, 3, 4]

    def test_deterministic(self, tmp_path):
        anns, _ = self._toy(tmp_path)
        assert sample_for_domain(anns, 3, seed=5) == sample_for_domain(anns, 3, seed=5)

    def test_coverage_guarantee(self, tmp_path):
        anns, cats_of = self._toy(tmp_path)
        selection = sample_for_domain(anns, 2, seed=3)
        covered = set().union(*(set(cats_of[i]) for i in selection))
        assert covered == {1, 2, 3}


class TestMixSeed:
    def test_stable_and_sensitive(self):
        assert mix_seed(1, 2, "haze") == mix_seed(1, 2, "haze")
        assert mix_seed(1, 2, "haze") != mix_seed(1, 3, "haze")
        assert mix_seed(1, 2, "haze") != mix_seed(1, 2, "rain")
        assert 0 <= mix_seed(0, 0, "") < 2**64


def _nine_specs():
    return [
        ("haze-moderate", DegradationSpec.from_preset("haze-moderate")),
        ("illum-dark", DegradationSpec(DegradationKind.ILLUMINATION, {"gamma": 2.2})),
        ("lowres-x2", DegradationSpec(DegradationKind.LOW_RESOLUTION, {"factor": 2})),
        ("noise-moderate", DegradationSpec.from_preset("noise-moderate")),
        ("blur-s1.5", DegradationSpec(DegradationKind.GAUSSIAN_BLUR, {"sigma": 1.5})),
        ("saltpepper-5", DegradationSpec(DegradationKind.SALT_PEPPER, {"density": 0.05})),
        ("motion-9", DegradationSpec(DegradationKind.MOTION_BLUR, {"length": 9})),
        ("defocus-3", DegradationSpec(DegradationKind.DEFOCUS, {"radius": 3})),
        ("rain-half", DegradationSpec(DegradationKind.RAIN, {"intensity": 0.5, "streak_length": 7})),
    ]


class TestAmplify:
    def test_identity_pipeline_passthrough(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        out = tiny_dataset["tmp"] / "out_identity"
        specs = [("identity", DegradationSpec(DegradationKind.ILLUMINATION, {"gamma": 1.0}))]
        manifest = amplify(anns, table, specs, 3, out, seed=1, image_root=tiny_dataset["image_root"])
        record = manifest.domains[0]
        assert len(record.images) == 3 and not manifest.gaps
        for entry in record.images:
            src = load_image(tiny_dataset["image_root"] / f"img{entry['source_id']}.png")
            dst = load_image(out / "identity" / "images" / entry["file_name"])
            assert np.array_equal(src, dst)
        with open(record.annotation_file) as fh:
            doc = json.load(fh)
        with open(tiny_dataset["annotations"]) as fh:
            source_doc = json.load(fh)
        src_by_image = {}
        for a in source_doc["annotations"]:
            src_by_image.setdefault(a["image_id"], []).append(a)
        new_to_src = {e["id"]: e["source_id"] for e in record.images}
        out_by_image = {}
        for a in doc["annotations"]:
            out_by_image.setdefault(a["image_id"], []).append(a)
        for new_id, src_id in new_to_src.items():
            for got, want in zip(out_by_image[new_id], src_by_image[src_id]):
                for key in ("bbox", "category_id", "segmentation"):
                    assert json.dumps(got.get(key)) == json.dumps(want.get(key))

    def test_deterministic_across_runs_and_workers(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        specs = [
            ("noise-moderate", DegradationSpec.from_preset("noise-moderate")),
            ("saltpepper-5", DegradationSpec(DegradationKind.SALT_PEPPER, {"density": 0.05})),
        ]
        digests = []
        for run, workers in (("a", 1), ("b", 1), ("c", 4)):
            out = tiny_dataset["tmp"] / f"out_{run}"
            manifest = amplify(
                anns, table, specs, 2, out, seed=9, image_root=tiny_dataset["image_root"], workers=workers
            )
            blob = b""
            for record in manifest.domains:
                for entry in record.images:
                    blob += (out / record.tag / "images" / entry["file_name"]).read_bytes()
                blob += (out / record.tag / "annotations.json").read_bytes()
            digests.append(blob)
        assert digests[0] == digests[1] == digests[2]

    def test_manifest_counts_and_files_exist(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        out = tiny_dataset["tmp"] / "out_full"
        manifest = amplify(
            anns, table, _nine_specs(), 2, out, seed=4, image_root=tiny_dataset["image_root"]
        )
        assert manifest.m_output_images == sum(manifest.counts().values()) == 18
        for record in manifest.domains:
            for entry in record.images:
                assert (out / record.tag / "images" / entry["file_name"]).is_file()
        loaded = DatasetManifest.load(out / "manifest.json")
        assert loaded.counts() == manifest.counts()
        assert loaded.global_seed == 4

    def test_kernel_failure_becomes_gap_entry(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        (tiny_dataset["image_root"] / "img2.png").unlink()
        out = tiny_dataset["tmp"] / "out_gap"
        specs = [("identity", DegradationSpec(DegradationKind.ILLUMINATION, {"gamma": 1.0}))]
        manifest = amplify(anns, table, specs, 3, out, seed=1, image_root=tiny_dataset["image_root"])
        assert len(manifest.gaps) == 1
        assert manifest.gaps[0]["source_image_id"] == 2
        assert len(manifest.domains[0].images) == 2

    def test_style_ingest(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        style_dir = tiny_dataset["tmp"] / "styled"
        style_dir.mkdir()
        for i in (1, 3):
            (style_dir / f"img{i}.png").write_bytes(
                (tiny_dataset["image_root"] / f"img{i}.png").read_bytes()
            )
        out = tiny_dataset["tmp"] / "out_style"
        manifest = amplify(
            anns, table, [("sketch", StyleIngest(str(style_dir)))], 3, out, seed=2,
            image_root=tiny_dataset["image_root"],
        )
        record = manifest.domains[0]
        assert record.kind == "style"
        # img2 has no styled counterpart -> gap
        assert {g["source_image_id"] for g in manifest.gaps} == {2}
        assert {e["source_id"] for e in record.images} == {1, 3}

    def test_severity_presets_recorded_in_manifest(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        out = tiny_dataset["tmp"] / "out_haze_pair"
        specs = [
            ("haze-moderate", DegradationSpec.from_preset("haze-moderate")),
            ("haze-severe", DegradationSpec.from_preset("haze-severe")),
        ]
        manifest = amplify(anns, table, specs, 2, out, seed=3, image_root=tiny_dataset["image_root"])
        by_tag = {d.tag: d.spec for d in manifest.domains}
        assert set(by_tag) == {"haze-moderate", "haze-severe"}
        assert by_tag["haze-moderate"]["params"]["m"] == 0.05
        assert by_tag["haze-severe"]["params"]["m"] == 0.08
        assert by_tag["haze-moderate"]["severity_preset"] == "haze-moderate"

    def test_duplicate_tags_rejected(self, tiny_dataset):
        anns, table = load_annotations(tiny_dataset["annotations"])
        spec = DegradationSpec(DegradationKind.ILLUMINATION, {"gamma": 1.0})
        with pytest.raises(ManifestError):
            amplify(
                anns, table, [("x", spec), ("x", spec)], 1,
                tiny_dataset["tmp"] / "dup", seed=0, image_root=tiny_dataset["image_root"],
            )


class TestManifestInvariants:
    def _record(self, tag, kind):
        return DomainRecord(tag=tag, kind=kind, spec={}, out_dir="", annotation_file="", images=[])

    def test_too_many_imaging_domains(self):
        records = [self._record(f"d{i}", "imaging") for i in range(10)]
        with pytest.raises(ManifestError):
            DatasetManifest("src", 0, 0, 0, records)

    def test_eighteen_domains_allowed(self):
        records = [self._record(f"i{i}", "imaging") for i in range(9)]
        records += [self._record(f"s{i}", "style") for i in range(9)]
        manifest = DatasetManifest("src", 0, 0, 0, records)
        assert len(manifest.domains) == 18

    def test_image_in_two_domains_rejected(self):
        records = [self._record("a", "imaging"), self._record("b", "imaging")]
        records[0].images = [{"id": 1, "source_id": 1, "file_name": "x.png"}]
        records[1].images = [{"id": 1, "source_id": 1, "file_name": "x.png"}]
        manifest = DatasetManifest("src", 0, 0, 0, records)
        with pytest.raises(ManifestError):
            manifest.domain_of_image()


class TestVoc:
    def test_empty_set_zero_files(self, tmp_path):
        anns = AnnotationSet([], [])
        table = CategoryTable([])
        assert export_voc(anns, table, tmp_path / "voc") == 0

    def test_bndbox_arithmetic(self, tmp_path):
        doc = make_lvis_doc(
            [{"id": 1, "file_name": "scene.png", "width": 20, "height": 20}],
            [{"id": 1, "image_id": 1, "bbox": [2, 3, 4, 5], "category_id": 1}],
            tiny_categories(),
        )
        anns, table = load_annotations(write_json(tmp_path / "one.json", doc))
        out = tmp_path / "voc"
        assert export_voc(anns, table, out) == 1
        xml = (out / "scene.xml").read_text()
        assert "<xmin>2</xmin>" in xml and "<ymin>3</ymin>" in xml
        assert "<xmax>6</xmax>" in xml and "<ymax>8</ymax>" in xml
        assert "<name>car</name>" in xml

    def test_voc_roundtrip_content_identical(self, tmp_path):
        doc = make_lvis_doc(
            [
                {"id": 1, "file_name": "a.png", "width": 32, "height": 24},
                {"id": 2, "file_name": "b.png", "width": 40, "height": 30},
            ],
            [
                {"id": 1, "image_id": 1, "bbox": [2, 3, 4, 5], "category_id": 1},
                {"id": 2, "image_id": 1, "bbox": [10.5, 2.25, 6.5, 8.0], "category_id": 2},
                {"id": 3, "image_id": 2, "bbox": [0, 0, 40, 30], "category_id": 3},
            ],
            tiny_categories(),
        )
        anns, table = load_annotations(write_json(tmp_path / "rt.json", doc))
        first = tmp_path / "voc1"
        export_voc(anns, table, first)
        parsed_anns, parsed_table = load_voc(first)
        second = tmp_path / "voc2"
        export_voc(parsed_anns, parsed_table, second)
        for path in sorted(first.glob("*.xml")):
            assert (second / path.name).read_text() == path.read_text()
