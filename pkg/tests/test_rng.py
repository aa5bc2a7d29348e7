import numpy as np

from modelmerge.rng import derive_key, mix64, name64, uniform_at, uniform_stream


def test_vectorized_matches_scalar():
    key = derive_key(12345, "model.layers.0.self_attn.q_proj.weight", "a")
    stream = uniform_stream(key, 500)
    for i in range(500):
        assert stream[i] == uniform_at(key, i)


def test_known_answer_vector():
    # Frozen outputs of the documented scheme; any reimplementation must agree.
    assert mix64(0) == 0
    assert mix64(1) == 0x71A5AEF029FD7FF5
    assert mix64(0x9E3779B97F4A7C15) == 0xD42DAD4DBD1B32B9
    key = derive_key(0, "w", "a")
    assert key == 0x8444AFD46D91F949
    first = uniform_stream(key, 3)
    assert first.tolist() == [uniform_at(key, 0), uniform_at(key, 1), uniform_at(key, 2)]


def test_range_and_determinism():
    u = uniform_stream(derive_key(7, "x", "b"), 10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    again = uniform_stream(derive_key(7, "x", "b"), 10_000)
    assert np.array_equal(u, again)


def test_streams_differ_by_role_name_seed():
    base = uniform_stream(derive_key(1, "t", "a"), 64)
    assert not np.array_equal(base, uniform_stream(derive_key(1, "t", "b"), 64))
    assert not np.array_equal(base, uniform_stream(derive_key(1, "u", "a"), 64))
    assert not np.array_equal(base, uniform_stream(derive_key(2, "t", "a"), 64))


def test_name_hash_is_little_endian_sha256_prefix():
    import hashlib
    digest = hashlib.sha256(b"tensor").digest()
    assert name64("tensor") == int.from_bytes(digest[:8], "little")
