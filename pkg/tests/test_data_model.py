import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fusionkit.data_model import (
    NN,
    OBSERVED,
    PARAMETRIC,
    BlockSpec,
    ImputedDataset,
    StackedDataset,
    block_mask,
    emit_csv,
    fixture_paths,
    load_csv,
    load_imputed,
    provenance_path,
    stack,
)
from fusionkit.errors import DataError


def test_blockspec_validation():
    with pytest.raises(DataError):
        BlockSpec((), ("y",), ("z",))
    with pytest.raises(DataError):
        BlockSpec(("a",), ("a",), ("z",))
    spec = BlockSpec(("x1", "x2"), ("y",), ("z1", "z2"))
    assert spec.dims == (2, 1, 2)
    assert spec.columns_for("B") == ("x1", "x2", "z1", "z2")
    assert BlockSpec.from_dict(spec.to_dict()) == spec


def test_stack_layout_and_mask():
    spec = BlockSpec.default(1, 1, 1)
    ds = stack([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0]], spec)
    assert ds.n == 3 and ds.n_a == 2
    assert np.isnan(ds.values[0, 2]) and np.isnan(ds.values[2, 1])
    assert np.array_equal(ds.mask, block_mask(2, 1, spec))
    assert np.array_equal(ds.zb, [[6.0]])
    with pytest.raises(ValueError):
        ds.values[0, 0] = 9.0


def test_stack_reorders_named_columns():
    spec = BlockSpec(("x",), ("y",), ("z",))
    ds = stack([[2.0, 1.0]], [[3.0, 4.0]], spec, columns_a=("y", "x"))
    assert ds.values[0, 0] == 1.0 and ds.values[0, 1] == 2.0
    with pytest.raises(DataError):
        stack([[2.0, 1.0]], [[3.0, 4.0]], spec, columns_a=("y", "q"))


def test_non_finite_observed_value_names_cell():
    spec = BlockSpec.default()
    with pytest.raises(DataError) as err:
        stack([[1.0, np.inf]], [[1.0, 2.0]], spec)
    assert err.value.row == 0 and err.value.column == "y1"


def test_load_csv_errors_name_line_and_column(tmp_path):
    spec = BlockSpec.default()
    p = tmp_path / "a.csv"
    p.write_text("y1,x1\n1,2\n3,oops\n")
    with pytest.raises(DataError) as err:
        load_csv(p, spec, "A")
    assert err.value.row == 3 and err.value.column == "x1"
    assert "oops" in str(err.value)
    p.write_text("y1,x1\n1,nan\n")
    with pytest.raises(DataError):
        load_csv(p, spec, "A")
    p.write_text("x1,z1\n1,2\n")
    with pytest.raises(DataError):
        load_csv(p, spec, "A")
    p.write_text("y1,x1,grp\n1,2,a\n")
    assert np.array_equal(load_csv(p, spec, "A", ignore=("grp",)), [[2.0, 1.0]])


def test_fixture_loads():
    a, b = fixture_paths()
    spec = BlockSpec.default()
    ds = stack(load_csv(a, spec, "A"), load_csv(b, spec, "B"), spec)
    assert (ds.n_a, ds.n_b) == (30, 30)


def _imputed(rng, n_a=4, n_b=3):
    spec = BlockSpec.default(1, 2, 1)
    vals = rng.standard_normal((n_a + n_b, 4)) * 10.0 ** rng.integers(-5, 5, size=(n_a + n_b, 4))
    tags = (NN,) * n_a + (PARAMETRIC,) * n_b
    donor = np.r_[n_a + rng.integers(0, n_b, n_a), -np.ones(n_b, dtype=int)]
    comp = np.r_[-np.ones(n_a, dtype=int), rng.integers(0, 2, n_b)]
    return ImputedDataset(vals, n_a, n_b, spec, tags, donor, comp)


@given(st.integers(0, 10_000))
def test_emit_roundtrip_lossless(tmp_path_factory, seed):
    imp = _imputed(np.random.default_rng(seed))
    path = tmp_path_factory.mktemp("emit") / "out.csv"
    emit_csv(imp, path)
    back = load_imputed(path, imp.spec)
    assert np.array_equal(back.values, imp.values)
    assert back.tags == imp.tags
    assert np.array_equal(back.donor, imp.donor)
    assert np.array_equal(back.component, imp.component)
    assert provenance_path(path).exists()


def test_cell_provenance():
    imp = _imputed(np.random.default_rng(0))
    prov = imp.cell_provenance()
    assert prov[0, 3] == NN and prov[0, 1] == OBSERVED
    assert prov[5, 1] == PARAMETRIC and prov[5, 3] == OBSERVED


def test_donor_must_come_from_other_file():
    spec = BlockSpec.default()
    with pytest.raises(DataError):
        ImputedDataset(np.zeros((2, 3)), 1, 1, spec, (NN, NN), np.array([0, 0]))


def test_stacked_dataset_shape_check():
    with pytest.raises(DataError):
        StackedDataset(np.zeros((3, 3)), 1, 1, BlockSpec.default())
