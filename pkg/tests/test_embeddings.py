import numpy as np
import pytest

from models.embeddings import (
    EmbeddingError,
    EmbeddingMatrix,
    pooled_similarity,
    read_embeddings,
    similarity_features,
    write_embeddings,
    zero_shot_predict,
)
from utils.artifacts import MissingArtifactError


@pytest.fixture
def images():
    values = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, -3.0]])
    return EmbeddingMatrix(values=values, source="image", row_keys=["1", "2", "3", "4"])


@pytest.fixture
def texts():
    values = np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return EmbeddingMatrix(values=values, source="text", row_keys=["walking", "sitting", "standing"])


def test_emb1_layout(tmp_path, images):
    path = write_embeddings(images, tmp_path / "images.emb")
    data = path.read_bytes()
    assert data[:4] == b"EMB1"
    assert int.from_bytes(data[4:8], "little") == 4
    assert int.from_bytes(data[8:12], "little") == 3
    assert data[12] == 0
    loaded = read_embeddings(path)
    assert np.array_equal(loaded.values, images.values)
    assert loaded.row_keys == images.row_keys
    assert loaded.source == "image"


def test_truncated_file_rejected(tmp_path, images):
    path = write_embeddings(images, tmp_path / "images.emb")
    path.write_bytes(path.read_bytes()[:20])
    with pytest.raises(EmbeddingError, match="truncated"):
        read_embeddings(path)


def test_missing_file_points_at_embed(tmp_path):
    with pytest.raises(MissingArtifactError, match="run `embed` first"):
        read_embeddings(tmp_path / "nope.emb")


def test_cosine_scores(images, texts):
    similarity = similarity_features(images, texts, class_order=["walking_running", "sitting", "standing"])
    expected = np.array(
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2**-0.5, 2**-0.5, 0.0], [0.0, 0.0, -1.0]],
    )
    assert np.allclose(similarity.values, expected)
    assert similarity.values.min() >= -1.0 and similarity.values.max() <= 1.0


def test_scaling_rows_does_not_change_scores(images, texts):
    scaled = EmbeddingMatrix(values=images.values * 7.5, source="image", row_keys=images.row_keys)
    assert np.allclose(similarity_features(scaled, texts).values, similarity_features(images, texts).values)


def test_zero_shot_and_max_pooling(images):
    texts = EmbeddingMatrix(
        values=np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        source="text",
        row_keys=["walking", "running", "sitting", "standing"],
    )
    owners = ["walking_running", "walking_running", "sitting", "standing"]
    pooled = pooled_similarity(images, texts, owners, ["walking_running", "sitting", "standing"])
    assert pooled.values.shape == (4, 3)
    assert zero_shot_predict(pooled) == ["walking_running", "sitting", "walking_running", "walking_running"]


def test_contract_violations(images, texts):
    with pytest.raises(EmbeddingError):
        EmbeddingMatrix(values=np.zeros((2, 3)), source="image", row_keys=["only-one"])
    with pytest.raises(EmbeddingError):
        EmbeddingMatrix(values=np.array([[np.nan, 1.0]]), source="image", row_keys=["1"])
    narrow = EmbeddingMatrix(values=np.ones((1, 2)), source="text", row_keys=["x"])
    with pytest.raises(EmbeddingError):
        similarity_features(images, narrow)


def test_zero_norm_row_rejected_on_construction():
    values = np.ones((3, 4))
    values[1] = 0.0
    with pytest.raises(EmbeddingError, match="Zero-norm image row: b"):
        EmbeddingMatrix(values=values, source="image", row_keys=["a", "b", "c"])
    assert EmbeddingMatrix(values=np.zeros((0, 4)), source="image", row_keys=[]).rows == 0


@pytest.mark.parametrize("rows, dim", [(1, 3), (1, 512), (285, 3), (285, 512)])
def test_emb1_round_trip_is_bit_exact(tmp_path, rows, dim):
    values = np.random.default_rng(rows * dim).standard_normal((rows, dim)).astype(np.float32)
    matrix = EmbeddingMatrix(values=values, source="image", row_keys=[str(i) for i in range(1, rows + 1)])
    loaded = read_embeddings(write_embeddings(matrix, tmp_path / "m.emb"))
    assert loaded.values.dtype == np.float32
    assert loaded.values.tobytes() == values.tobytes()
    assert loaded.row_keys == matrix.row_keys


def test_randomised_cosine_bounds_and_scale_invariance():
    rng = np.random.default_rng(0)
    imgs = EmbeddingMatrix(values=rng.standard_normal((10000, 8)), source="image", row_keys=[str(i) for i in range(10000)])
    texts = EmbeddingMatrix(values=rng.standard_normal((3, 8)), source="text", row_keys=["a", "b", "c"])
    scores = similarity_features(imgs, texts).values
    assert scores.min() >= -1.0 - 1e-6 and scores.max() <= 1.0 + 1e-6
    factors = rng.uniform(0.1, 10.0, size=(10000, 1))
    rescaled = EmbeddingMatrix(values=imgs.values * factors, source="image", row_keys=imgs.row_keys)
    assert np.allclose(similarity_features(rescaled, texts).values, scores, atol=1e-6, rtol=0)
