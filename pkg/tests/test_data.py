import logging

import numpy as np
import pytest

from data import (
    FAMILIES,
    generate_2d,
    generate_regression,
    grid,
    load_regression_csv,
    meta_path,
    raw_2d,
    read_dataset,
    split_indices,
    write_dataset,
)
from errors import ConfigError, DataIOError, InputError


def test_circles_lie_on_two_radii():
    X, y = raw_2d("circles", 200, 0.0, seed=0)
    radii = np.linalg.norm(X, axis=1)
    np.testing.assert_allclose(radii[y == 0], 0.5)
    np.testing.assert_allclose(radii[y == 1], 1.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_families_are_balanced_binary_and_normalized(family):
    ds = generate_2d(family, 61, 0.05, seed=1)
    assert ds.n_classes == 2
    assert sorted(np.bincount(ds.y).tolist()) == [30, 31]
    np.testing.assert_allclose(ds.X.min(axis=0), 0.0)
    np.testing.assert_allclose(ds.X.max(axis=0), 1.0)


def test_generation_is_deterministic():
    a = generate_2d("moons", 100, 0.1, seed=5)
    b = generate_2d("moons", 100, 0.1, seed=5)
    c = generate_2d("moons", 100, 0.1, seed=6)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.test_idx, b.test_idx)
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != c.fingerprint


def test_split_is_disjoint_and_covering():
    ds = generate_2d("streaks", 100, 0.05, seed=2)
    assert len(ds.train_idx) == 80 and len(ds.test_idx) == 20
    assert not set(ds.train_idx) & set(ds.test_idx)
    with pytest.raises(ConfigError):
        split_indices(10, 0.0, 0)


def test_denormalize_recovers_raw_points():
    X_raw, _ = raw_2d("polynomials", 50, 0.05, seed=3)
    ds = generate_2d("polynomials", 50, 0.05, seed=3)
    np.testing.assert_allclose(ds.denormalize(ds.X), X_raw, atol=1e-12)


def test_generator_arguments_are_validated():
    with pytest.raises(ConfigError, match="data.family"):
        generate_2d("spirals", 100, 0.05, seed=0)
    with pytest.raises(ConfigError) as info:
        generate_2d("circles", 5, -1.0, seed=0)
    assert len(info.value.violations) == 2


def test_regression_target_is_standardized_on_train(regression_data):
    _, y = regression_data.train()
    assert abs(y.mean()) < 1e-12
    assert y.std() == pytest.approx(1.0)
    assert regression_data.n_classes is None
    assert generate_regression(40, dim=3, seed=1).dim == 3


def _write_csv(path, text):
    path.write_text(text)
    return path


def test_csv_loader_normalizes_and_splits(tmp_path):
    path = _write_csv(tmp_path / "toy.csv", "a,b,price\n1,10,5\n2,20,6\n3,40,7\n4,30,8\n5,50,9\n")
    ds = load_regression_csv(path, "price", split_fraction=0.8, seed=0, standardize=False)
    np.testing.assert_allclose(ds.X[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(ds.X[:, 1], [0.0, 0.25, 0.75, 0.5, 1.0])
    np.testing.assert_array_equal(ds.y, [5, 6, 7, 8, 9])
    assert len(ds.train_idx) == 4 and len(ds.test_idx) == 1
    again = load_regression_csv(path, "price", split_fraction=0.8, seed=0, standardize=False)
    assert again.fingerprint == ds.fingerprint
    assert ds.provenance["target"] == "price"


def test_csv_loader_reports_bad_lines(tmp_path):
    path = _write_csv(tmp_path / "bad.csv", "a,y\n1,2\n,3\n4,x\n")
    with pytest.raises(InputError, match=r"\[3, 4\]"):
        load_regression_csv(path, "y")


def test_csv_loader_errors(tmp_path):
    path = _write_csv(tmp_path / "ok.csv", "a,y\n1,2\n2,3\n")
    with pytest.raises(ConfigError, match="target column"):
        load_regression_csv(path, "price")
    with pytest.raises(DataIOError):
        load_regression_csv(tmp_path / "absent.csv", "y")


def test_constant_column_maps_to_half_with_a_warning(tmp_path, caplog):
    path = _write_csv(tmp_path / "const.csv", "a,b,y\n1,7,1\n2,7,2\n3,7,3\n")
    with caplog.at_level(logging.WARNING):
        ds = load_regression_csv(path, "y", standardize=False)
    np.testing.assert_array_equal(ds.X[:, 1], 0.5)
    assert "constant" in caplog.text


def test_grid_orders_x1_fastest():
    points = grid(3)
    assert points.shape == (9, 2)
    np.testing.assert_array_equal(points[:4], [[0, 0], [0.5, 0], [1, 0], [0, 0.5]])
    with pytest.raises(ConfigError):
        grid(1)


@pytest.mark.parametrize("make", [
    lambda: generate_2d("circles", 40, 0.05, seed=7),
    lambda: generate_regression(40, dim=2, seed=7),
])
def test_dataset_files_reload_exactly(tmp_path, make):
    ds = make()
    path = write_dataset(ds, tmp_path / "data.csv")
    assert meta_path(path).exists()
    back = read_dataset(path)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.train_idx, ds.train_idx)
    assert back.fingerprint == ds.fingerprint


def test_edited_dataset_file_fails_its_fingerprint(tmp_path, circles):
    path = write_dataset(circles, tmp_path / "data.csv")
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace("train", "test") if "train" in lines[1] else lines[1].replace("test", "train")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataIOError, match="fingerprint"):
        read_dataset(path)
