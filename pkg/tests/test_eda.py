import numpy as np
import pytest
from PIL import Image

from dataset.downloader import cache_path
from dataset.eda import EdaError, compute_eda, dataset_mean_color, plot_eda
from dataset.manifest import DatasetManifest, build_manifest
from tests.helpers import make_rows


@pytest.fixture
def mixed_manifest():
    rows = make_rows({"walking_running": 3, "sitting": 2, "standing": 1})
    sizes = [(640, 480), (500, 375), (427, 640), (640, 427), (612, 612), (480, 640)]
    for row, (w, h) in zip(rows, sizes):
        row["width"], row["height"] = w, h
    return build_manifest(rows)


def test_group_statistics_match_numpy(mixed_manifest):
    report = compute_eda(mixed_manifest)
    walking = report.by_label()["walking_running"]
    widths = np.array([640, 500, 427])
    heights = np.array([480, 375, 640])
    assert walking.count == 3
    assert walking.percent == pytest.approx(50.0)
    assert walking.width_mean == pytest.approx(widths.mean())
    assert walking.width_std == pytest.approx(widths.std(ddof=1))
    assert walking.aspect_mean == pytest.approx((widths / heights).mean())
    assert walking.width_range == [427, 640]
    assert report.overall.count == 6


def test_single_image_class_has_zero_sigma(mixed_manifest):
    standing = compute_eda(mixed_manifest).by_label()["standing"]
    assert standing.single_sample
    assert standing.width_std == 0.0
    assert standing.aspect_std == 0.0


def test_two_image_hand_case():
    rows = make_rows({"sitting": 2})
    rows[0]["width"], rows[0]["height"] = 100, 100
    rows[1]["width"], rows[1]["height"] = 300, 100
    sitting = compute_eda(build_manifest(rows, dimension_range=None)).by_label()["sitting"]
    assert sitting.width_mean == pytest.approx(200.0)
    assert sitting.width_std == pytest.approx(141.42, abs=0.01)
    assert sitting.aspect_mean == pytest.approx(2.0)
    assert sitting.height_std == 0.0


def test_class_means_recombine_to_overall(mixed_manifest):
    report = compute_eda(mixed_manifest)
    groups = report.by_label().values()
    for field in ("width_mean", "height_mean", "aspect_mean"):
        weighted = sum(g.count * getattr(g, field) for g in groups) / report.overall.count
        assert weighted == pytest.approx(getattr(report.overall, field), abs=1e-6)


def test_empty_dataset_rejected():
    with pytest.raises(EdaError, match="empty dataset"):
        compute_eda(DatasetManifest())


def test_markdown_table(mixed_manifest):
    table = compute_eda(mixed_manifest).to_markdown()
    assert table.splitlines()[0].startswith("| Label | Count | % of Total")
    assert "| overall | 6 | 100.0% |" in table


def test_plots_written_with_data(tmp_path, mixed_manifest):
    written = plot_eda(mixed_manifest, tmp_path, {"config_hash": "x", "seed": 0})
    assert [p.name for p in written] == ["eda_scatter.png", "eda_box.png", "eda_aspect.png", "eda_overlay.png"]
    for path in written:
        assert path.exists()
        assert path.with_suffix(".json").exists()


def test_dataset_mean_color(tmp_path):
    manifest = build_manifest(make_rows({"sitting": 2}, width=8, height=6), dimension_range=None)
    colours = [(255, 0, 0), (0, 0, 255)]
    for record, colour in zip(manifest.records, colours):
        Image.new("RGB", (record.width, record.height), colour).save(cache_path(record, tmp_path))
    assert dataset_mean_color(manifest, tmp_path) == pytest.approx([0.5, 0.0, 0.5])
