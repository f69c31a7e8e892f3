import numpy as np
import pytest

from ghoststat.core.errors import FormatError
from ghoststat.io.stacks import HEADER, MAGIC, open_stack, read_header, read_vector, write_stack


def test_write_and_map(tmp_path):
    frames = np.arange(12, dtype=np.float64).reshape(3, 4) / 10
    path = str(tmp_path / "p.gips")
    header = write_stack(path, frames)
    assert (header.T, header.M) == (3, 4)

    mapped_header, data = open_stack(path)
    assert mapped_header == header
    np.testing.assert_array_equal(np.asarray(data), frames)


def test_vector_is_single_frame(tmp_path):
    path = str(tmp_path / "v.gips")
    write_stack(path, np.array([0.5, 0.25]))
    np.testing.assert_array_equal(read_vector(path, expected_m=2), [0.5, 0.25])
    with pytest.raises(FormatError):
        read_vector(path, expected_m=3)


def test_read_vector_rejects_stacks(tmp_path):
    path = str(tmp_path / "p.gips")
    write_stack(path, np.zeros((2, 3)))
    with pytest.raises(FormatError, match="single-frame"):
        read_vector(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.gips"
    path.write_bytes(HEADER.pack(b"NOPE", 1, 1, 1, 1) + np.zeros(1).tobytes())
    with pytest.raises(FormatError, match="magic"):
        read_header(str(path))


def test_unknown_version(tmp_path):
    path = tmp_path / "v2.gips"
    path.write_bytes(HEADER.pack(MAGIC, 2, 1, 1, 1) + np.zeros(1).tobytes())
    with pytest.raises(FormatError, match="version"):
        read_header(str(path))


def test_size_must_match_header(tmp_path):
    path = tmp_path / "short.gips"
    path.write_bytes(HEADER.pack(MAGIC, 1, 4, 2, 1) + np.zeros(5).tobytes())
    with pytest.raises(FormatError, match="size"):
        read_header(str(path))


def test_short_header(tmp_path):
    path = tmp_path / "tiny.gips"
    path.write_bytes(b"GIP")
    with pytest.raises(FormatError):
        read_header(str(path))
