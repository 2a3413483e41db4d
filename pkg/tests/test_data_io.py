import numpy as np
import pytest

from fedsynth.data_io import (
    Schema,
    SchemaField,
    discretize,
    load_dataset,
    load_partition,
    prepare_dataset,
    save_dataset,
    save_partition,
)
from fedsynth.domain import DiscreteDataset, Domain


def cont_field(bins=32, lo=0.0, hi=32.0, name="x"):
    return SchemaField(name=name, kind="continuous", min=lo, max=hi, bins=bins)


def test_bin_boundaries():
    schema = Schema([cont_field()])
    data, report = discretize([[0.0, 32.0, 15.5]], schema)
    assert data.rows[:, 0].tolist() == [0, 31, 15]
    assert report.total_clamped() == 0


def test_out_of_range_clamped_and_counted():
    schema = Schema([cont_field(bins=4, lo=0.0, hi=4.0)])
    data, report = discretize([[-1.0, 5.0, 2.5]], schema)
    assert data.rows[:, 0].tolist() == [0, 3, 2]
    assert report.clamped_low == {"x": 1}
    assert report.clamped_high == {"x": 1}


def test_categorical_first_seen_order():
    schema = Schema([SchemaField(name="c", kind="categorical")])
    data, _ = discretize([["red", "blue", "red", "green"]], schema)
    assert data.rows[:, 0].tolist() == [0, 1, 0, 2]
    assert data.domain.cardinalities == (3,)


def test_declared_categories_reject_unknown():
    schema = Schema([SchemaField(name="c", kind="categorical", categories=["a", "b"])])
    with pytest.raises(ValueError):
        discretize([["a", "z"]], schema)


def test_schema_validation():
    with pytest.raises(ValueError):
        SchemaField(name="x", kind="continuous", min=1.0, max=1.0)
    with pytest.raises(ValueError):
        SchemaField(name="x", kind="wat")


def test_prepare_dataset_roundtrip(tmp_path):
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,color\n0.5,red\n3.2,blue\n3.9,red\n")
    schema = Schema(
        [cont_field(bins=4, lo=0.0, hi=4.0, name="age"), SchemaField(name="color", kind="categorical")]
    )
    schema_path = tmp_path / "schema.json"
    schema.to_json(str(schema_path))
    data, report = prepare_dataset(str(csv_path), str(schema_path))
    assert data.n_records == 3
    assert data.rows.tolist() == [[0, 0], [3, 1], [3, 0]]


def test_prepare_dataset_missing_column(tmp_path):
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("a\n1\n")
    schema_path = tmp_path / "schema.json"
    Schema([cont_field(name="b", bins=2, lo=0, hi=1)]).to_json(str(schema_path))
    with pytest.raises(ValueError, match="missing"):
        prepare_dataset(str(csv_path), str(schema_path))


def test_dataset_npz_roundtrip(tmp_path):
    dom = Domain.make(["a", "b"], [4, 2])
    rows = np.array([[0, 1], [3, 0], [2, 1]])
    path = str(tmp_path / "d.npz")
    save_dataset(path, DiscreteDataset(dom, rows))
    back = load_dataset(path)
    assert back.domain == dom
    np.testing.assert_array_equal(back.rows, rows)


def test_partition_file_roundtrip(tmp_path):
    path = str(tmp_path / "part.txt")
    save_partition(path, [0, 2, 1, 1])
    np.testing.assert_array_equal(load_partition(path), [0, 2, 1, 1])
