import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftworld import rng as rngmod


def test_same_seed_same_stream():
    a = rngmod.make_stream(123, "generation")
    b = rngmod.make_stream(123, "generation")
    assert np.array_equal(a.uniform(size=100), b.uniform(size=100))


def test_streams_differ_by_name():
    draws = {
        name: rngmod.make_stream(5, name).uniform(size=8).tolist()
        for name in ("generation", "drift", "problems", "agent")
    }
    values = list(draws.values())
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            assert values[i] != values[j]


def test_streams_differ_by_seed():
    a = rngmod.make_stream(1, "drift").uniform(size=8)
    b = rngmod.make_stream(2, "drift").uniform(size=8)
    assert not np.array_equal(a, b)


def test_indexed_stream_names():
    base = rngmod.make_stream(9, "problems").uniform(size=8)
    idx0 = rngmod.make_stream(9, "problems.0").uniform(size=8)
    idx1 = rngmod.make_stream(9, "problems.1").uniform(size=8)
    assert not np.array_equal(base, idx0)
    assert not np.array_equal(idx0, idx1)


def test_unknown_stream_name_rejected():
    with pytest.raises(Exception):
        rngmod.make_stream(1, "nonsense")


def test_state_roundtrip_mid_sequence():
    stream = rngmod.make_stream(77, "problems")
    stream.uniform(size=13)  # odd count so buffered state is nontrivial
    saved = rngmod.stream_state(stream)
    ahead = stream.uniform(size=50)

    restored = rngmod.restore_stream(saved)
    assert np.array_equal(restored.uniform(size=50), ahead)


def test_state_is_plain_data():
    stream = rngmod.make_stream(4, "drift")
    stream.normal(size=3)
    state = rngmod.stream_state(stream)
    import json

    json.dumps(state)  # must survive canonical serialization


def test_clone_stream_matches_then_diverges_independently():
    stream = rngmod.make_stream(11, "problems")
    stream.uniform(size=7)
    clone = rngmod.clone_stream(stream)
    assert np.array_equal(stream.uniform(size=20), clone.uniform(size=20))
    # advancing the clone must not move the original
    before = rngmod.stream_state(stream)
    clone.uniform(size=100)
    assert rngmod.stream_state(stream) == before


def test_derive_world_seed_distinct():
    seen = set()
    for master in (0, 1, 99):
        for i in range(2000):
            s = rngmod.derive_world_seed(master, i)
            assert 0 <= s < 1 << 64
            seen.add(s)
    assert len(seen) == 3 * 2000


def test_derive_world_seed_deterministic():
    assert rngmod.derive_world_seed(3, 14) == rngmod.derive_world_seed(3, 14)


@settings(max_examples=50, deadline=None)
@given(
    dim=st.integers(min_value=1, max_value=4),
    radius=st.floats(min_value=1e-3, max_value=100.0,
                     allow_nan=False, allow_infinity=False),
)
def test_ball_uniform_in_ball(dim, radius):
    gen = rngmod.make_stream(1, "agent")
    for _ in range(20):
        v = rngmod.ball_uniform(gen, dim, radius)
        assert v.shape == (dim,)
        assert np.linalg.norm(v) <= radius * (1 + 1e-12)


def test_ball_uniform_deterministic():
    a = rngmod.make_stream(8, "agent")
    b = rngmod.make_stream(8, "agent")
    for _ in range(10):
        assert np.array_equal(rngmod.ball_uniform(a, 2, 4.0),
                              rngmod.ball_uniform(b, 2, 4.0))


def test_stream_algorithm_is_counter_based():
    # The whole replay story rests on save/restore of a counter-based
    # bit generator; make sure nobody quietly swaps it out.
    stream = rngmod.make_stream(0, "generation")
    assert type(stream.bit_generator).__name__.lower() == rngmod.STREAM_ALGORITHM[:6]
