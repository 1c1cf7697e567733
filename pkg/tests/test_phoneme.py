import json

import pytest
from hypothesis import given, strategies as st

from audio2arkit.blendshape import default_schema
from audio2arkit.phoneme import (
    OutOfVocabulary,
    Phoneme,
    PhonemeClass,
    PhonemeSequence,
    PriorTable,
    UnknownPhoneme,
    articulation_prior,
    inventory,
    load_prior_table,
    parse_lexicon,
    phonemize,
    read_phoneme_annotations,
    render_guidance_text,
    split_pinyin,
)


# ---------------------------------------------------------------- symbols

def test_parse_classes_and_stress():
    p = Phoneme.parse("AA1", "en")
    assert (p.cls, p.base, p.stress_or_tone) == (PhonemeClass.OPEN_VOWEL, "AA", 1)
    assert Phoneme.parse("B", "en").cls is PhonemeClass.BILABIAL
    assert Phoneme.parse("ong1", "zh").cls is PhonemeClass.ROUNDED_VOWEL
    assert Phoneme.parse("m", "zh").cls is PhonemeClass.BILABIAL
    assert Phoneme.parse("sp", "en").cls is PhonemeClass.SILENCE


@pytest.mark.parametrize("sym,lang", [("AA", "en"), ("QQ", "en"), ("b", "en"), ("a", "zh"), ("xyz3", "zh"), ("B", "zh")])
def test_parse_rejects(sym, lang):
    with pytest.raises(UnknownPhoneme):
        Phoneme.parse(sym, lang)


def test_sequence_language_purity():
    en, zh = Phoneme.parse("B", "en"), Phoneme.parse("b", "zh")
    with pytest.raises(ValueError):
        PhonemeSequence((en, zh))


def test_sequence_timing_validation():
    with pytest.raises(ValueError):
        PhonemeSequence.from_symbols(["B", "AA1"], "en", [(0.0, 0.1)])
    with pytest.raises(ValueError):
        PhonemeSequence.from_symbols(["B"], "en", [(0.2, 0.1)])


def test_annotation_round_trip():
    seq = PhonemeSequence.from_symbols(["B", "AA1"], "en", [(0.0, 0.1), (0.1, 0.3)])
    back = read_phoneme_annotations(json.dumps(seq.to_json()), "en")
    assert back.symbols == seq.symbols and back.timing == seq.timing


# ---------------------------------------------------------------- lexicon

def test_phonemize_examples():
    assert phonemize("hello", "en").symbols == ["HH", "AH0", "L", "OW1"]
    assert phonemize("ba", "zh").symbols == ["b", "a1"]
    with pytest.raises(OutOfVocabulary) as e:
        phonemize("zzqx", "en")
    assert e.value.word == "zzqx"


def test_phonemize_sentence_groups_get_silence():
    syms = phonemize("hello. hello", "en").symbols
    assert syms == ["HH", "AH0", "L", "OW1", "sil", "HH", "AH0", "L", "OW1"]


def test_phonemize_zh_toned_pinyin_fallback():
    assert phonemize("zhong1", "zh").symbols == ["zh", "ong1"]
    with pytest.raises(OutOfVocabulary):
        phonemize("qqq1", "zh")


def test_split_pinyin():
    assert split_pinyin("zhong1") == ["zh", "ong1"]
    assert split_pinyin("a4") == ["a4"]
    assert split_pinyin("ma") == ["m", "a5"]
    assert split_pinyin("xue2") == ["x", "ve2"]
    assert split_pinyin("lü4") == ["l", "v4"]
    with pytest.raises(UnknownPhoneme):
        split_pinyin("hello")


def test_parse_lexicon_errors():
    assert parse_lexicon("# c\nhi\tHH AY1\n", "en").lookup("HI") == ("HH", "AY1")
    with pytest.raises(ValueError, match="line 1"):
        parse_lexicon("hi HH AY1\n", "en")
    with pytest.raises(UnknownPhoneme):
        parse_lexicon("hi\tHH XX\n", "en")


# ---------------------------------------------------------------- priors

def test_prior_examples():
    assert articulation_prior("B").targets["mouthClose"] >= 0.6
    assert articulation_prior("AA1").targets["jawOpen"] >= 0.5
    assert articulation_prior("AA1").targets["jawOpen"] == pytest.approx(0.69)
    assert articulation_prior("sil").targets == {}


def test_stress_raises_jaw_opening():
    assert articulation_prior("AA1").targets["jawOpen"] > articulation_prior("AA0").targets["jawOpen"]


@pytest.mark.parametrize("lang", ["en", "zh"])
def test_prior_closed_over_inventory(lang):
    table = load_prior_table()
    schema = default_schema()
    for p in inventory(lang):
        pr = table.prior(p)
        assert all(name in schema for name in pr.targets)
        assert all(0.0 <= v <= 1.0 for v in pr.targets.values())
        assert (pr.targets.get("mouthClose", 0.0) > 0.5) == (p.cls is PhonemeClass.BILABIAL), p.symbol


def test_prior_table_validation():
    rows = json.loads(json.dumps([{"class": c.value, "nominal_duration": 0.05} for c in PhonemeClass]))
    PriorTable(rows)
    with pytest.raises(ValueError, match="lacks"):
        PriorTable(rows[1:])
    with pytest.raises(ValueError, match="schema"):
        PriorTable(rows + [{"symbol": "B", "language": "en", "targets": {"nope": 1}, "nominal_duration": 0.1}])
    with pytest.raises(ValueError, match="outside"):
        PriorTable(rows + [{"symbol": "B", "language": "en", "targets": {"jawOpen": 2}, "nominal_duration": 0.1}])


def test_symbol_row_shadows_class_row():
    rows = [{"class": c.value, "nominal_duration": 0.05} for c in PhonemeClass]
    rows.append({"symbol": "P", "language": "en", "targets": {"jawOpen": 0.3}, "nominal_duration": 0.05})
    t = PriorTable(rows)
    assert t.prior(Phoneme.parse("P", "en")).targets == {"jawOpen": 0.3}
    assert t.prior(Phoneme.parse("B", "en")).targets == {}


# ---------------------------------------------------------------- guidance

def test_guidance_lists_each_class_once():
    text = render_guidance_text(PhonemeSequence.from_symbols(["B", "AA1", "M", "AA0"], "en"))
    lines = text.splitlines()
    assert lines[0] == "Articulation guidance:"
    assert sum(l.startswith("- bilabial (B, M)") for l in lines) == 1
    assert sum(l.startswith("- open vowel (AA)") for l in lines) == 1
    assert "rest pose" not in text


def test_guidance_silence_only():
    text = render_guidance_text(PhonemeSequence.from_symbols(["sil"], "en"))
    assert text.splitlines()[1].startswith("- silence: return to the neutral rest pose")
    assert len(text.splitlines()) == 2


@given(st.lists(st.sampled_from([p.symbol for p in inventory("en")]), max_size=20))
def test_guidance_covers_every_nonsilent_class(syms):
    seq = PhonemeSequence.from_symbols(syms, "en")
    text = render_guidance_text(seq)
    for p in seq.items:
        if p.cls is not PhonemeClass.SILENCE:
            assert f"- {p.cls.value.replace('_', ' ')} (" in text
    assert len(set(text.splitlines())) == len(text.splitlines())
