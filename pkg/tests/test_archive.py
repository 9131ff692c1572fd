import math

import numpy as np
import pytest

from medforge.archive import (
    ArchiveFormatError,
    TensorArchive,
    average,
    deserialize,
    fnv1a,
    read_archive,
    serialize,
    write_archive,
)


def random_shapes(rng: np.random.Generator, n_tensors: int) -> dict[str, tuple]:
    shapes = {}
    for i in range(n_tensors):
        rank = int(rng.integers(0, 4))
        shapes[f"tensor.{i:03d}"] = tuple(int(rng.integers(1, 6)) for _ in range(rank))
    return shapes


def random_archive(
    rng: np.random.Generator, n_tensors: int = 5, shapes: dict | None = None
) -> TensorArchive:
    shapes = shapes if shapes is not None else random_shapes(rng, n_tensors)
    archive = TensorArchive()
    for name, shape in shapes.items():
        archive[name] = rng.standard_normal(shape, dtype=np.float32)
    return archive


def test_fnv1a_known_vectors():
    # standard FNV-1a 64 test vectors
    assert fnv1a(b"") == 0xCBF29CE484222325
    assert fnv1a(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a(b"foobar") == 0x85944171F73967E8


def test_round_trip_single_tensor(tmp_path):
    archive = TensorArchive({"w": np.array([1.0, 2.0], dtype=np.float32)})
    path = tmp_path / "a.mfta"
    write_archive(archive, path)
    loaded = read_archive(path)
    assert loaded.same_content(archive)
    assert loaded["w"].dtype == np.float32


def test_corrupted_checksum_detected(tmp_path):
    archive = TensorArchive({"w": np.array([1.0, 2.0], dtype=np.float32)})
    blob = bytearray(serialize(archive))
    blob[-1] ^= 0xFF
    with pytest.raises(ArchiveFormatError, match="checksum mismatch"):
        deserialize(bytes(blob))


def test_corrupted_body_detected():
    archive = TensorArchive({"w": np.array([1.0, 2.0], dtype=np.float32)})
    blob = bytearray(serialize(archive))
    blob[20] ^= 0x01
    with pytest.raises(ArchiveFormatError, match="checksum mismatch"):
        deserialize(bytes(blob))


def test_bad_magic_detected():
    archive = TensorArchive({"w": np.array([1.0], dtype=np.float32)})
    blob = b"XXXX" + serialize(archive)[4:]
    with pytest.raises(ArchiveFormatError, match="bad magic"):
        deserialize(blob)


def test_truncated_is_io_error():
    archive = TensorArchive({"w": np.arange(64, dtype=np.float32)})
    blob = serialize(archive)
    with pytest.raises(OSError):
        deserialize(blob[:10])


def test_hundred_random_tensors_rewrite_identically(tmp_path):
    rng = np.random.default_rng(17)
    archive = random_archive(rng, n_tensors=100)
    first = serialize(archive)
    loaded = deserialize(first)
    assert serialize(loaded) == first


def test_empty_archive_deterministic():
    blob_a = serialize(TensorArchive())
    blob_b = serialize(TensorArchive())
    assert blob_a == blob_b
    assert len(blob_a) == 4 + 4 + 4 + 8  # magic, version, count, checksum


def test_insertion_order_irrelevant():
    x = np.array([1.5], dtype=np.float32)
    y = np.array([[2.5, 3.5]], dtype=np.float32)
    forward = TensorArchive({"alpha": x, "beta": y})
    backward = TensorArchive({"beta": y, "alpha": x})
    assert serialize(forward) == serialize(backward)


def test_average_of_identical_archives_is_identity():
    rng = np.random.default_rng(3)
    archive = random_archive(rng)
    mean = average([archive, archive, archive])
    assert mean.same_content(archive)  # bit-exact


def test_average_two_values():
    a = TensorArchive({"w": np.array([0.0], dtype=np.float32)})
    b = TensorArchive({"w": np.array([2.0], dtype=np.float32)})
    assert average([a, b])["w"][0] == 1.0


def test_average_rejects_single_archive():
    archive = TensorArchive({"w": np.array([1.0], dtype=np.float32)})
    with pytest.raises(ValueError, match="at least 2"):
        average([archive])


def test_average_names_first_divergent_tensor():
    a = TensorArchive({"w": np.array([1.0], dtype=np.float32)})
    b = TensorArchive({"v": np.array([1.0], dtype=np.float32)})
    with pytest.raises(ValueError, match="'v'"):
        average([a, b])


def test_average_names_shape_mismatch():
    a = TensorArchive({"w": np.zeros(2, dtype=np.float32)})
    b = TensorArchive({"w": np.zeros(3, dtype=np.float32)})
    with pytest.raises(ValueError, match="shape mismatch for 'w'"):
        average([a, b])


def ulps_apart(a: np.ndarray, b: np.ndarray) -> int:
    """Max distance in representable float32 steps."""
    ia = a.view(np.int32).astype(np.int64)
    ib = b.view(np.int32).astype(np.int64)
    # map the sign-magnitude float layout onto a monotonic integer line
    ia = np.where(ia < 0, np.int64(-(1 << 31)) - ia, ia)
    ib = np.where(ib < 0, np.int64(-(1 << 31)) - ib, ib)
    return int(np.max(np.abs(ia - ib))) if a.size else 0


def test_average_against_fsum_oracle():
    rng = np.random.default_rng(123)
    archives = [random_archive(rng, n_tensors=4) for _ in range(6)]
    mean = average(archives)
    for name in mean.names():
        stacked = [a[name].reshape(-1) for a in archives]
        flat = mean[name].reshape(-1)
        for j in range(flat.size):
            oracle = np.float32(math.fsum(float(s[j]) for s in stacked) / 6)
            assert ulps_apart(flat[j : j + 1], np.array([oracle])) <= 1


def test_average_permutation_invariant():
    rng = np.random.default_rng(5)
    archives = [random_archive(rng) for _ in range(4)]
    forward = average(archives)
    backward = average(list(reversed(archives)))
    assert forward.same_content(backward)


def test_scalar_rank_zero_tensor_round_trip(tmp_path):
    archive = TensorArchive({"scalar": np.float32(4.25)})
    path = tmp_path / "s.mfta"
    write_archive(archive, path)
    loaded = read_archive(path)
    assert loaded["scalar"].shape == ()
    assert loaded["scalar"] == np.float32(4.25)


def test_write_returns_byte_count(tmp_path):
    archive = TensorArchive({"w": np.zeros(8, dtype=np.float32)})
    path = tmp_path / "c.mfta"
    count = write_archive(archive, path)
    assert count == path.stat().st_size
