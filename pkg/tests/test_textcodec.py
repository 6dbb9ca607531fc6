import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodecoder.geo import GeoPoint, PixelCoord
from geodecoder.textcodec import (
    SPECIALS,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    format_coord,
    format_pixel,
    parse_coord,
    parse_pixel,
)

ASCII = "".join(chr(c) for c in range(32, 127))


def test_specials_fixed():
    v = build_vocab(["ab"])
    assert v.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<sep>"]
    assert len(v) == 6
    assert build_vocab(["ab"]) == v


def test_first_appearance_order():
    assert build_vocab(["cab", "dc"]).tokens[4:] == ["c", "a", "b", "d"]


def test_vocab_errors():
    with pytest.raises(ValueError):
        build_vocab([])
    with pytest.raises(ValueError, match="max_size"):
        build_vocab([ASCII], max_size=50)
    with pytest.raises(ValueError):
        Vocabulary(["a", "<pad>"])


def test_encode_decode():
    v = build_vocab([ASCII])
    assert encode(v, "") == [] and decode(v, []) == ""
    ids = encode(v, "x=12")
    assert len(ids) == 4 and min(ids) >= len(SPECIALS)
    assert decode(v, [1] + ids + [2, 0]) == "x=12"


def test_unknown_character_names_offset():
    v = build_vocab(["abc"])
    with pytest.raises(ValueError, match=r"'z' at offset 2"):
        encode(v, "abz")


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab([ASCII])
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text().split("\n")
    assert lines[0] == "<pad>" and lines[3] == "<sep>"
    assert Vocabulary.load(tmp_path / "vocab.txt") == v


@settings(max_examples=1000, deadline=None)
@given(st.text(alphabet=ASCII, max_size=60))
def test_round_trip_random_text(s):
    v = build_vocab([ASCII])
    assert decode(v, encode(v, s)) == s


def test_format_coord_examples():
    assert format_coord(GeoPoint(116.519630, 39.774726)) == "116.519630,39.774726"
    assert format_coord(GeoPoint(0, 0)) == "0.000000,0.000000"
    with pytest.raises(ValueError):
        parse_coord("116.5, 39.7")


@settings(max_examples=300, deadline=None)
@given(st.floats(-180, 180), st.floats(-90, 90))
def test_coord_round_trip(lng, lat):
    p = parse_coord(format_coord(GeoPoint(lng, lat)))
    assert abs(p.lng - lng) <= 5e-7 + 1e-12 and abs(p.lat - lat) <= 5e-7 + 1e-12


def test_format_pixel_examples():
    assert format_pixel(PixelCoord(112.0, 112.0)) == "x=112,y=112"
    assert format_pixel(PixelCoord(10.5, 3.4)) == "x=11,y=3"
    with pytest.raises(ValueError):
        format_pixel(PixelCoord(-1, 0))
    with pytest.raises(ValueError):
        parse_pixel("x=1;y=2")


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 9999), st.floats(0, 9999))
def test_pixel_round_trip(x, y):
    px = parse_pixel(format_pixel(PixelCoord(x, y)))
    assert abs(px.x - x) <= 0.5 and abs(px.y - y) <= 0.5
