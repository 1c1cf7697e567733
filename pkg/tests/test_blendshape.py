import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from audio2arkit.blendshape import (
    BlendshapeSequence,
    ChannelSchema,
    ParseFailure,
    SchemaError,
    clip_sequence,
    default_schema,
    load_schema,
    parse_sequence,
    read_csv,
    serialize_sequence,
    write_csv,
)

TWO = ChannelSchema(("jawOpen", "mouthClose"))


def seq2(jaw, close, fps=30.0):
    return BlendshapeSequence(np.column_stack([jaw, close]).reshape(-1, 2), fps, TWO)


def test_default_schema_has_33_unique_names():
    s = default_schema()
    assert s.count == 33 == len(set(s.names))
    assert {"jawOpen", "mouthClose", "mouthPucker", "mouthFunnel", "cheekPuff"} <= set(s.names)
    assert not any(n.startswith(("eye", "brow")) for n in s.names)


def test_schema_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        ChannelSchema(("a", "a"))
    with pytest.raises(ValueError):
        ChannelSchema(("a", ""))


def test_load_schema_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"version": 2, "channels": ["a", "b", "c"]}))
    assert load_schema(p).names == ("a", "b", "c")


def test_serialize_two_by_two():
    s = seq2([0.0, 0.5], [0.1, 0.0])
    assert serialize_sequence(s, 2) == '{"jawOpen":[0.00,0.50],"mouthClose":[0.10,0.00]}'


def test_serialize_empty_sequence():
    s = BlendshapeSequence.zeros(0, 30.0, TWO)
    assert json.loads(serialize_sequence(s)) == {"jawOpen": [], "mouthClose": []}


@pytest.mark.parametrize("value,decimals,text", [
    (0.123456, 2, "0.12"),
    (0.125, 2, "0.12"),   # exact binary tie, rounds to even
    (0.375, 2, "0.38"),   # exact binary tie, rounds to even
    (0.5, 1, "0.5"),
    (0.987654, 4, "0.9877"),
])
def test_serialize_rounding(value, decimals, text):
    s = seq2([value], [0.0])
    assert json.loads(serialize_sequence(s, decimals).replace(text, '"hit"'))["jawOpen"] == ["hit"]


def test_serialize_rejects_bad_decimals():
    with pytest.raises(ValueError):
        serialize_sequence(seq2([0.1], [0.1]), 0)
    with pytest.raises(ValueError):
        serialize_sequence(seq2([0.1], [0.1]), 7)


def test_serialize_uses_schema_order():
    s = seq2([0.2], [0.3])
    assert list(json.loads(serialize_sequence(s))) == ["jawOpen", "mouthClose"]


def test_negative_zero_is_not_emitted():
    s = seq2([-0.0], [-0.001])
    assert "-" not in serialize_sequence(s, 2)


valid_values = st.integers(0, 40).flatmap(
    lambda t: arrays(np.float64, (t, 33), elements=st.floats(0, 1, allow_nan=False))
)


@given(valid_values, st.integers(1, 6))
def test_round_trip_within_quantizer(values, decimals):
    s = BlendshapeSequence(values, 30.0)
    text = serialize_sequence(s, decimals)
    out = parse_sequence(text, s.schema, "strict")
    assert out.warnings == []
    assert out.sequence.values.shape == values.shape
    assert np.all(np.abs(out.sequence.values - values) <= 0.5 * 10 ** -decimals + 1e-12)


@given(valid_values)
def test_serialization_is_deterministic(values):
    a = BlendshapeSequence(values, 30.0)
    b = BlendshapeSequence(values.copy(), 30.0)
    assert serialize_sequence(a).encode() == serialize_sequence(b).encode()


def test_recover_truncates_to_shortest_list():
    text = '{"jawOpen":[0.1,0.2,0.3,0.4,0.5],"mouthClose":[0.1,0.2,0.3,0.4]}'
    out = parse_sequence(text, TWO, "recover")
    assert out.sequence.n_frames == 4
    assert len(out.warnings) == 1
    np.testing.assert_allclose(out.sequence.channel("jawOpen"), [0.1, 0.2, 0.3, 0.4])


def test_recover_clips_and_zero_fills():
    out = parse_sequence('{"jawOpen":[1.3]}', TWO, "recover")
    assert out.sequence.channel("jawOpen").tolist() == [1.0]
    assert out.sequence.channel("mouthClose").tolist() == [0.0]
    assert len(out.warnings) == 2


def test_recover_truncated_midframe():
    full = '{"jawOpen":[0.10,0.20,0.30],"mouthClose":[0.40,0.50,0.60]}'
    cut = full[: full.index("0.60") + 2]   # stops inside the last number
    out = parse_sequence(cut, TWO, "recover")
    assert out.sequence.n_frames == 2
    np.testing.assert_allclose(out.sequence.channel("mouthClose"), [0.4, 0.5])
    assert any("tail" in w for w in out.warnings)


def test_recover_strips_prose_and_fences():
    text = 'Sure! ```json\n{"jawOpen":[0.5],"mouthClose":[0.25]}\n```'
    out = parse_sequence(text, TWO, "recover")
    assert out.sequence.values.tolist() == [[0.5, 0.25]]
    assert out.warnings == ["ignored text outside the JSON object"]


def test_recover_raises_without_frames():
    with pytest.raises(ParseFailure):
        parse_sequence("no json here", TWO, "recover")
    with pytest.raises(ParseFailure):
        parse_sequence('{"jawOpen":[0.1', TWO, "recover")


def test_recover_accepts_well_formed_empty():
    out = parse_sequence('{"jawOpen":[],"mouthClose":[]}', TWO, "recover")
    assert out.sequence.n_frames == 0 and out.warnings == []


@pytest.mark.parametrize("text", [
    '{"jawOpen":[0.1,0.2],"mouthClose":[0.1]}',
    '{"jawOpen":[0.1]}',
    '{"jawOpen":[0.1],"mouthClose":[0.1],"extra":[0.0]}',
    '{"jawOpen":[1.5],"mouthClose":[0.1]}',
    '{"jawOpen":["a"],"mouthClose":[0.1]}',
    '{"jawOpen":[NaN],"mouthClose":[0.1]}',
    '{"jawOpen":[0.1],"mouthClose":[0.1]',
    '[0.1, 0.2]',
])
def test_strict_rejects_any_deviation(text):
    with pytest.raises(SchemaError):
        parse_sequence(text, TWO, "strict")


def test_nan_never_accepted_in_recover():
    out = parse_sequence('{"jawOpen":[0.1,NaN,0.3],"mouthClose":[0.2,0.2,0.2]}', TWO, "recover")
    assert np.all(np.isfinite(out.sequence.values))
    assert out.sequence.n_frames == 1


def test_clip_examples():
    s = BlendshapeSequence(np.array([[-0.1], [0.5], [1.2]]), 30.0, ChannelSchema(("jawOpen",)))
    assert clip_sequence(s).values.ravel().tolist() == [0.0, 0.5, 1.0]
    z = BlendshapeSequence.zeros(4, 30.0)
    assert clip_sequence(z) == z


@given(arrays(np.float64, (12, 3), elements=st.floats(-2, 3, allow_nan=False)))
def test_clip_idempotent_and_monotone(values):
    s = BlendshapeSequence(values, 30.0, ChannelSchema(("a", "b", "c")))
    c = clip_sequence(s)
    assert clip_sequence(c) == c
    assert c.out_of_range() == 0
    flat, orig = c.values.ravel(), values.ravel()
    inside = (orig >= 0) & (orig <= 1)
    order = np.argsort(orig[inside], kind="stable")
    assert np.all(np.diff(flat[inside][order]) >= 0)


def test_sequence_is_immutable():
    s = BlendshapeSequence.zeros(2, 30.0)
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0


def test_out_of_range_flagged_not_clipped():
    s = seq2([1.5, 0.2], [0.0, -0.1])
    assert s.out_of_range() == 2
    assert s.values.max() == 1.5


def test_csv_round_trip(schema):
    rng = np.random.default_rng(3)
    s = BlendshapeSequence(np.round(rng.uniform(0, 1, (20, 33)), 6), 30.0, schema)
    back = read_csv(write_csv(s), schema)
    assert back.fps == pytest.approx(30.0, rel=1e-6)
    np.testing.assert_array_equal(back.values, s.values)
    back2 = read_csv(write_csv(s, with_time=False), schema, fps=30.0)
    np.testing.assert_array_equal(back2.values, s.values)


def test_csv_missing_column_names_it():
    text = "time,jawOpen\n0.0,0.1\n"
    with pytest.raises(SchemaError, match="mouthClose"):
        read_csv(text, TWO)


def test_csv_time_column_checks_fps():
    rows = "\n".join(f"{t / 30:.6f},0.1,0.2" for t in range(10))
    text = "time,jawOpen,mouthClose\n" + rows + "\n"
    assert read_csv(text, TWO).fps == pytest.approx(30.0, rel=1e-4)
    assert read_csv(text, TWO, fps=30.2).n_frames == 10        # within 1%
    with pytest.raises(SchemaError, match="fps"):
        read_csv(text, TWO, fps=25.0)


@pytest.mark.parametrize("text,msg", [
    ("jawOpen,mouthClose\n0.1,abc\n", "non-numeric"),
    ("jawOpen,mouthClose\n0.1\n", "expected 2 cells"),
    ("jawOpen,mouthClose,bogus\n0.1,0.1,0.1\n", "bogus"),
])
def test_csv_errors(text, msg):
    with pytest.raises(SchemaError, match=msg):
        read_csv(text, TWO, fps=30.0)


def test_csv_lenient_zero_fills():
    s = read_csv("jawOpen\n0.5\n", TWO, fps=30.0, strict=False)
    assert s.values.tolist() == [[0.5, 0.0]]
