import json

import pytest

from dataset.splits import SplitAssignment, SplitError, allocate, stratified_split
from tests.helpers import make_manifest


def test_canonical_quotas(canonical_manifest):
    assignment = stratified_split(canonical_manifest, (0.8, 0.1, 0.1), seed=42)
    counts = assignment.counts(canonical_manifest)
    assert counts["walking_running"] == {"train": 78, "val": 10, "test": 10}
    assert counts["sitting"] == {"train": 76, "val": 10, "test": 9}
    assert counts["standing"] == {"train": 74, "val": 9, "test": 9}
    assert assignment.totals() == {"train": 228, "val": 29, "test": 28}


def test_every_image_assigned_once(canonical_manifest):
    assignment = stratified_split(canonical_manifest, seed=7)
    assert set(assignment.membership) == set(canonical_manifest.ids)
    ids = assignment.ids("train") + assignment.ids("val") + assignment.ids("test")
    assert sorted(ids) == sorted(canonical_manifest.ids)


def test_same_seed_same_split_and_bytes(tmp_path, canonical_manifest):
    a = stratified_split(canonical_manifest, seed=42)
    b = stratified_split(canonical_manifest, seed=42)
    assert a.membership == b.membership
    assert json.dumps(a.to_json_dict()) == json.dumps(b.to_json_dict())
    assert stratified_split(canonical_manifest, seed=43).membership != a.membership


def test_manifest_order_does_not_matter(canonical_manifest):
    shuffled = canonical_manifest.model_copy(update={"records": list(reversed(canonical_manifest.records))})
    assert stratified_split(shuffled, seed=42).membership == stratified_split(canonical_manifest, seed=42).membership


@pytest.mark.parametrize(
    "n, expected",
    [(98, [78, 10, 10]), (95, [76, 10, 9]), (92, [74, 9, 9]), (10, [8, 1, 1]), (1, [1, 0, 0]), (0, [0, 0, 0])],
)
def test_largest_remainder(n, expected):
    assert allocate(n, (0.8, 0.1, 0.1)) == expected


def test_tiny_class_warns():
    manifest = make_manifest({"walking_running": 2, "sitting": 10, "standing": 10})
    assignment = stratified_split(manifest, seed=1)
    assert assignment.warnings and "walking_running" in assignment.warnings[0]
    assert assignment.counts(manifest)["walking_running"]["train"] == 2


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.8, 0.1, 0.2), (1.0, 0.0, 0.0), (0.9, -0.1, 0.2)])
def test_bad_ratios(canonical_manifest, ratios):
    with pytest.raises(SplitError):
        stratified_split(canonical_manifest, ratios)


def test_json_round_trip(tmp_path, canonical_manifest):
    assignment = stratified_split(canonical_manifest, seed=42)
    path = tmp_path / "splits.json"
    path.write_text(json.dumps(assignment.to_json_dict()))
    loaded = SplitAssignment.read_json(path)
    assert loaded.membership == assignment.membership
    assert loaded.generator_name == "numpy.MT19937"
