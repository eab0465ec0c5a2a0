import numpy as np
import pytest

from realrss import datasets
from realrss.errors import ConfigurationError


def test_write_and_read_vertical(tmp_path):
    paths = datasets.write_vertical("iris", tmp_path, (2, 1, 1))
    blocks = [datasets.read_block(p) for p in paths]
    X, y, _ = datasets.load_builtin("iris")
    assert [b.values.shape for b in blocks] == [(150, 2), (150, 1), (150, 1)]
    assert np.array_equal(np.hstack([b.values for b in blocks]), X)
    assert np.array_equal(blocks[0].labels, y)
    assert blocks[1].labels is None


def test_read_block_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,label\n1,2,0\n3,x,1\n")
    with pytest.raises(ConfigurationError, match=r"bad.csv:3"):
        datasets.read_block(p)
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ConfigurationError, match=r":3: expected 2 cells"):
        datasets.read_block(p)
    p.write_text("a,label\n1,setosa\n")
    with pytest.raises(ConfigurationError, match="label"):
        datasets.read_block(p)


def test_split_columns():
    assert datasets.split_columns(4, (2, 1, 1)) == [[0, 1], [2], [3]]
    assert datasets.default_split(13) == (5, 4, 4)
    with pytest.raises(ConfigurationError):
        datasets.split_columns(4, (2, 2, 1))


def test_stratified_split_sizes():
    _, y, _ = datasets.load_builtin("wine")
    tr, te = datasets.train_test_indices(y, 36, seed=0)
    assert (tr.size, te.size) == (142, 36)
    assert set(np.bincount(y[te])) <= {9, 10, 11, 12, 13, 14, 15}
    tr2, te2 = datasets.train_test_indices(y, 36, seed=0)
    assert np.array_equal(te, te2)


def test_standardize_and_one_hot():
    v = np.array([[1.0, 5.0], [3.0, 5.0]])
    s = datasets.standardize(v)
    assert np.allclose(s[:, 0], [-1, 1]) and np.allclose(s[:, 1], 0)
    assert np.array_equal(datasets.one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ConfigurationError):
        datasets.one_hot(np.array([3]), 3)
