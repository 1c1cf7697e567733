"""Phoneme inventories, lexicon phonemizer and the articulation prior table.

English uses ARPAbet with a stress digit on vowels (``AA1``); Chinese uses a
Pinyin initial/final split with the tone digit on the final (``b a1``).
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

from .blendshape import ChannelSchema, default_schema

Language = Literal["zh", "en"]

SILENCE = "sil"
_SILENCE_ALIASES = {"sil", "sp", "spn", "<sil>", "pau", ""}


class PhonemeClass(str, Enum):
    BILABIAL = "bilabial"
    LABIODENTAL = "labiodental"
    ROUNDED_VOWEL = "rounded_vowel"
    OPEN_VOWEL = "open_vowel"
    CLOSE_VOWEL = "close_vowel"
    ALVEOLAR = "alveolar"
    VELAR = "velar"
    OTHER = "other"
    SILENCE = "silence"


ARPABET_VOWELS = frozenset(
    "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW".split()
)
ARPABET_CONSONANTS = frozenset(
    "B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH".split()
)

PINYIN_INITIALS = (
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l",
    "g", "k", "h", "j", "q", "x", "r", "z", "c", "s", "y", "w",
)
PINYIN_FINALS = frozenset(
    "a o e i u v ai ei ao ou an en ang eng ong er ia ie iao iu ian in iang ing "
    "iong io ua uo uai ui uan un uang ue ve van vn".split()
)

_EN_CLASS = {
    **{s: PhonemeClass.BILABIAL for s in ("B", "P", "M")},
    **{s: PhonemeClass.LABIODENTAL for s in ("F", "V")},
    **{s: PhonemeClass.OPEN_VOWEL for s in ("AA", "AE", "AH", "AW", "AY")},
    **{s: PhonemeClass.ROUNDED_VOWEL for s in ("AO", "OW", "OY", "UH", "UW")},
    **{s: PhonemeClass.CLOSE_VOWEL for s in ("EH", "ER", "EY", "IH", "IY")},
    **{s: PhonemeClass.ALVEOLAR for s in ("T", "D", "N", "L", "S", "Z")},
    **{s: PhonemeClass.VELAR for s in ("K", "G", "NG")},
    **{s: PhonemeClass.OTHER for s in ("CH", "DH", "HH", "JH", "R", "SH", "TH", "W", "Y", "ZH")},
}

_ZH_INITIAL_CLASS = {
    **{s: PhonemeClass.BILABIAL for s in ("b", "p", "m")},
    "f": PhonemeClass.LABIODENTAL,
    **{s: PhonemeClass.ALVEOLAR for s in ("d", "t", "n", "l", "z", "c", "s")},
    **{s: PhonemeClass.VELAR for s in ("g", "k", "h")},
    **{s: PhonemeClass.OTHER for s in ("j", "q", "x", "zh", "ch", "sh", "r", "y", "w")},
}
_ZH_ROUNDED = {"o", "ou", "ong", "iong", "iu", "uo", "io", "ui", "un", "ue", "ve", "vn", "u", "v"}


def _zh_final_class(final: str) -> PhonemeClass:
    if "a" in final:
        return PhonemeClass.OPEN_VOWEL
    if final in _ZH_ROUNDED:
        return PhonemeClass.ROUNDED_VOWEL
    return PhonemeClass.CLOSE_VOWEL


class UnknownPhoneme(ValueError):
    pass


class OutOfVocabulary(KeyError):
    def __init__(self, word: str):
        super().__init__(word)
        self.word = word

    def __str__(self):
        return f"out of vocabulary: {self.word!r}"


@dataclass(frozen=True)
class Phoneme:
    symbol: str
    language: Language
    cls: PhonemeClass
    stress_or_tone: int | None = None

    @property
    def base(self) -> str:
        """Symbol without its stress/tone digit."""
        return self.symbol.rstrip("0123456789")

    @classmethod
    def parse(cls, symbol: str, language: Language) -> "Phoneme":
        if symbol in _SILENCE_ALIASES or symbol.lower() in _SILENCE_ALIASES:
            return cls(SILENCE, language, PhonemeClass.SILENCE)
        if language == "en":
            base, digit = symbol.rstrip("012"), symbol[len(symbol.rstrip("012")):]
            if base in ARPABET_VOWELS:
                if len(digit) != 1:
                    raise UnknownPhoneme(f"ARPAbet vowel needs one stress digit: {symbol!r}")
                return cls(symbol, "en", _EN_CLASS[base], int(digit))
            if symbol in ARPABET_CONSONANTS:
                return cls(symbol, "en", _EN_CLASS[symbol])
            raise UnknownPhoneme(f"not an ARPAbet symbol: {symbol!r}")
        if language == "zh":
            if symbol in _ZH_INITIAL_CLASS:
                return cls(symbol, "zh", _ZH_INITIAL_CLASS[symbol])
            m = re.fullmatch(r"([a-z]+)([1-5])", symbol)
            if m and m.group(1) in PINYIN_FINALS:
                return cls(symbol, "zh", _zh_final_class(m.group(1)), int(m.group(2)))
            raise UnknownPhoneme(f"not a toned Pinyin initial/final: {symbol!r}")
        raise ValueError(f"unsupported language {language!r}")


def inventory(language: Language) -> list[Phoneme]:
    """Every phoneme symbol of a language, one per stress/tone variant, plus silence."""
    out = [Phoneme.parse(SILENCE, language)]
    if language == "en":
        for v in sorted(ARPABET_VOWELS):
            out.extend(Phoneme.parse(f"{v}{s}", "en") for s in (0, 1, 2))
        out.extend(Phoneme.parse(c, "en") for c in sorted(ARPABET_CONSONANTS))
    else:
        out.extend(Phoneme.parse(i, "zh") for i in PINYIN_INITIALS)
        for f in sorted(PINYIN_FINALS):
            out.extend(Phoneme.parse(f"{f}{t}", "zh") for t in range(1, 6))
    return out


@dataclass(frozen=True)
class PhonemeSequence:
    """Phonemes of one language with optional ``(start, end)`` timing in seconds."""

    items: tuple[Phoneme, ...]
    timing: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        langs = {p.language for p in self.items}
        if len(langs) > 1:
            raise ValueError(f"mixed-language phoneme sequence: {sorted(langs)}")
        if self.timing is not None:
            timing = tuple((float(a), float(b)) for a, b in self.timing)
            if len(timing) != len(self.items):
                raise ValueError("timing must have one entry per phoneme")
            if any(b < a for a, b in timing):
                raise ValueError("phoneme timing entry ends before it starts")
            object.__setattr__(self, "timing", timing)

    def __len__(self):
        return len(self.items)

    @property
    def symbols(self) -> list[str]:
        return [p.symbol for p in self.items]

    @property
    def language(self) -> Language | None:
        return self.items[0].language if self.items else None

    def is_silent(self) -> bool:
        return all(p.cls is PhonemeClass.SILENCE for p in self.items)

    @classmethod
    def from_symbols(cls, symbols: Iterable[str], language: Language, timing=None):
        return cls(tuple(Phoneme.parse(s, language) for s in symbols), timing)

    def to_json(self) -> list[dict]:
        out = []
        for i, p in enumerate(self.items):
            row: dict = {"symbol": p.symbol}
            if self.timing is not None:
                row["start"], row["end"] = self.timing[i]
            out.append(row)
        return out


def read_phoneme_annotations(text: str, language: Language) -> PhonemeSequence:
    """Parse a JSON array of ``{symbol, start?, end?}``; timing is kept only if every row has it."""
    rows = json.loads(text)
    if not isinstance(rows, list):
        raise ValueError("phoneme annotation file must hold a JSON array")
    symbols = [r["symbol"] for r in rows]
    timed = rows and all("start" in r and "end" in r for r in rows)
    timing = [(r["start"], r["end"]) for r in rows] if timed else None
    return PhonemeSequence.from_symbols(symbols, language, timing)


def split_pinyin(syllable: str) -> list[str]:
    """Split a toned syllable into initial and toned final: ``"zhong1" -> ["zh", "ong1"]``.

    A missing tone digit is read as the neutral tone 5.
    """
    s = syllable.strip().lower().replace("ü", "v").replace("u:", "v")
    m = re.fullmatch(r"([a-z]+)([1-5]?)", s)
    if not m:
        raise UnknownPhoneme(f"not a Pinyin syllable: {syllable!r}")
    body, tone = m.group(1), m.group(2) or "5"
    initial = next((i for i in PINYIN_INITIALS if body.startswith(i) and len(body) > len(i)), "")
    final = body[len(initial):]
    if initial in ("j", "q", "x") and final.startswith("u"):
        final = "v" + final[1:]
    if final not in PINYIN_FINALS:
        raise UnknownPhoneme(f"not a Pinyin syllable: {syllable!r}")
    return ([initial] if initial else []) + [final + tone]


@dataclass(frozen=True)
class Lexicon:
    language: Language
    entries: Mapping[str, tuple[str, ...]]

    def __contains__(self, word):
        return self.key(word) in self.entries

    def key(self, word: str) -> str:
        word = unicodedata.normalize("NFC", word)
        return word.lower() if self.language == "en" else word

    def lookup(self, word: str) -> tuple[str, ...]:
        try:
            return self.entries[self.key(word)]
        except KeyError:
            raise OutOfVocabulary(word) from None


def parse_lexicon(text: str, language: Language) -> Lexicon:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word, sep, pron = line.partition("\t")
        if not sep or not pron.split():
            raise ValueError(f"lexicon line {lineno}: expected word<TAB>phonemes")
        for sym in pron.split():
            Phoneme.parse(sym, language)
        entries[unicodedata.normalize("NFC", word)] = tuple(pron.split())
    return Lexicon(language, entries)


_lexicons: dict[str, Lexicon] = {}


def load_lexicon(language: Language, path: str | Path | None = None) -> Lexicon:
    """Load a lexicon file; ``None`` selects the bundled one (cached)."""
    if path is not None:
        return parse_lexicon(Path(path).read_text("utf-8"), language)
    if language not in _lexicons:
        text = resources.files("audio2arkit.data").joinpath(f"lexicon_{language}.tsv").read_text("utf-8")
        _lexicons[language] = parse_lexicon(text, language)
    return _lexicons[language]


_SENTENCE_END = "。！？.!?"
_EN_WORD = re.compile(r"[a-z]+(?:'[a-z]+)*")
_ZH_PIECE = re.compile(r"[a-z]+[1-5]?|[㐀-鿿]")


def phonemize(segment_text: str, language: Language, lexicon: Lexicon | None = None) -> PhonemeSequence:
    """Look up every word and join the pronunciations.

    A silence marker separates sentence groups (text split on sentence-final
    punctuation); Chinese text is looked up per character, Latin runs inside
    Chinese text are read as Pinyin syllables.
    """
    lexicon = lexicon or load_lexicon(language)
    text = unicodedata.normalize("NFC", segment_text).lower()
    groups = [g for g in re.split(f"[{re.escape(_SENTENCE_END)}]", text)]
    symbols: list[str] = []
    for group in groups:
        words = _EN_WORD.findall(group) if language == "en" else _ZH_PIECE.findall(group)
        if not words:
            continue
        if symbols:
            symbols.append(SILENCE)
        for w in words:
            if w in lexicon:
                symbols.extend(lexicon.lookup(w))
            elif language == "zh" and w[-1].isdigit():
                try:
                    symbols.extend(split_pinyin(w))
                except UnknownPhoneme:
                    raise OutOfVocabulary(w) from None
            else:
                raise OutOfVocabulary(w)
    return PhonemeSequence.from_symbols(symbols, language)


@dataclass(frozen=True)
class ArticulationPrior:
    targets: Mapping[str, float]
    dominance: float = 1.0
    nominal_duration: float = 0.06


@dataclass(frozen=True)
class _PriorRow:
    targets: dict[str, float]
    dominance: float
    nominal_duration: float
    primary_stress_gain: dict[str, float] = field(default_factory=dict)


class PriorTable:
    """Class-level articulation targets with optional per-symbol overrides.

    Loaded from a JSON array of rows, each keyed by ``class`` or by ``symbol``
    (+ ``language``); a symbol row shadows its class row. All target keys are
    checked against the channel schema at load time.
    """

    def __init__(self, rows: Sequence[Mapping], schema: ChannelSchema | None = None):
        self.schema = schema or default_schema()
        self._by_class: dict[PhonemeClass, _PriorRow] = {}
        self._by_symbol: dict[tuple[str, str], _PriorRow] = {}
        for raw in rows:
            row = self._make_row(raw)
            if "symbol" in raw:
                key = (raw["language"], raw["symbol"])
                if key in self._by_symbol:
                    raise ValueError(f"duplicate prior row for symbol {key}")
                self._by_symbol[key] = row
            else:
                cls = PhonemeClass(raw["class"])
                if cls in self._by_class:
                    raise ValueError(f"duplicate prior row for class {cls.value}")
                self._by_class[cls] = row
        missing = [c.value for c in PhonemeClass if c not in self._by_class]
        if missing:
            raise ValueError(f"prior table lacks class rows: {missing}")

    def _make_row(self, raw: Mapping) -> _PriorRow:
        targets = {str(k): float(v) for k, v in raw.get("targets", {}).items()}
        gain = {str(k): float(v) for k, v in raw.get("primary_stress_gain", {}).items()}
        for name in list(targets) + list(gain):
            if name not in self.schema:
                raise ValueError(f"prior target {name!r} is not a schema channel")
        for name, v in targets.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"prior target {name}={v} outside [0, 1]")
        dominance = float(raw.get("dominance", 1.0))
        duration = float(raw["nominal_duration"])
        if dominance <= 0 or duration <= 0:
            raise ValueError("dominance and nominal_duration must be positive")
        return _PriorRow(targets, dominance, duration, gain)

    def row_for(self, phoneme: Phoneme) -> _PriorRow:
        return self._by_symbol.get((phoneme.language, phoneme.base)) or self._by_class[phoneme.cls]

    def prior(self, phoneme: Phoneme) -> ArticulationPrior:
        row = self.row_for(phoneme)
        targets = dict(row.targets)
        if phoneme.stress_or_tone == 1 and phoneme.language == "en":
            for name, g in row.primary_stress_gain.items():
                targets[name] = min(1.0, targets.get(name, 0.0) * (1.0 + g))
        return ArticulationPrior(targets, row.dominance, row.nominal_duration)

    def target_matrix(self, phonemes: Sequence[Phoneme]):
        """(n, K) target array plus dominance and duration vectors."""
        import numpy as np

        n, k = len(phonemes), self.schema.count
        targets = np.zeros((n, k))
        dominance = np.empty(n)
        duration = np.empty(n)
        for i, p in enumerate(phonemes):
            pr = self.prior(p)
            for name, v in pr.targets.items():
                targets[i, self.schema.index(name)] = v
            dominance[i] = pr.dominance
            duration[i] = pr.nominal_duration
        return targets, dominance, duration


def load_prior_table(path: str | Path | None = None, schema: ChannelSchema | None = None) -> PriorTable:
    if path is None:
        text = resources.files("audio2arkit.data").joinpath("priors_v1.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return PriorTable(json.loads(text), schema)


_default_table: PriorTable | None = None


def articulation_prior(phoneme: Phoneme | str, table: PriorTable | None = None,
                       language: Language = "en") -> ArticulationPrior:
    global _default_table
    if isinstance(phoneme, str):
        phoneme = Phoneme.parse(phoneme, language)
    if table is None:
        if _default_table is None:
            _default_table = load_prior_table()
        table = _default_table
    return table.prior(phoneme)


_RULES = {
    PhonemeClass.BILABIAL: "lips close fully and press together; jaw nearly shut",
    PhonemeClass.LABIODENTAL: "lower lip rises against the upper teeth; slight jaw opening",
    PhonemeClass.OPEN_VOWEL: "jaw opens wide; stressed syllables open further",
    PhonemeClass.ROUNDED_VOWEL: "lips round and protrude; moderate jaw opening",
    PhonemeClass.CLOSE_VOWEL: "lips spread slightly; small jaw opening",
    PhonemeClass.ALVEOLAR: "tongue tip at the ridge; lips relaxed, jaw slightly open",
    PhonemeClass.VELAR: "articulated at the back of the mouth; lips relaxed, jaw slightly open",
    PhonemeClass.OTHER: "follow the neighbouring vowels; postalveolars round the lips a little",
}
_REST_RULE = "silence: return to the neutral rest pose, all coefficients near zero"


def render_guidance_text(sequence: PhonemeSequence) -> str:
    """One line per phoneme class present, listing the symbols that triggered it."""
    by_class: dict[PhonemeClass, list[str]] = {}
    for p in sequence.items:
        if p.cls is PhonemeClass.SILENCE:
            continue
        syms = by_class.setdefault(p.cls, [])
        if p.base not in syms:
            syms.append(p.base)
    lines = ["Articulation guidance:"]
    if not by_class:
        lines.append(f"- {_REST_RULE}.")
        return "\n".join(lines)
    for cls in PhonemeClass:
        if cls in by_class:
            label = cls.value.replace("_", " ")
            lines.append(f"- {label} ({', '.join(by_class[cls])}): {_RULES[cls]}.")
    if any(p.cls is PhonemeClass.SILENCE for p in sequence.items):
        lines.append(f"- {_REST_RULE}.")
    return "\n".join(lines)
