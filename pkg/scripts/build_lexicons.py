"""Regenerate the bundled lexicons from CMUdict and pypinyin.

Build-time only (``pip install cmudict pypinyin``); the package reads the
committed TSV files and never imports either library.

    python scripts/build_lexicons.py
"""

from pathlib import Path

import cmudict
from pypinyin import Style, pinyin

from audio2arkit.phoneme import split_pinyin

OUT = Path(__file__).resolve().parents[1] / "src" / "audio2arkit" / "data"

EN_WORDS = """
a about after again all am an and apple are as at away back be before big blue bob book
bought box boy bring but by can cat come comes could day did do dog down each eat
every family father fine first fish for friend from fun get give go good great had
happy has have he hello help her here him his home house how i if in into is it just
keep kind know last let like little live long look lunch made make man many map may
maybe me mother move much must my name never new nice night no not now of off old on
once one only open or other our out over papa park people pie place play please pretty
put rain read red right room run said saw say school see she should show sing sit so
some soon start stop sun take talk tell thank that the their them then there these
they thing think this those three time to today together too tree try two under up
us very walk want was water way we well went were what when where which while white
who whole why will wish with woman word work world would write year yes yet you
young your baby ball bed bird boat bread brother city color dance door dream eye
face food green hand head heart king light love moon mouth music paper party phone
river road sea ship sky smile song star street summer table voice window
""".split()

# common characters; the corpus transcripts only use characters listed here
ZH_CHARS = (
    "你好世界今天气很我们八点吃饭妈买了一本书爸喝杯茶"
    "的是不在人有他这中大来上国个到说时要就出会可也和地"
    "年得生自以学过家发里后作用道行所然事成方多经么去法"
    "如都同现当没动面起看定还进样理心她爱些但从前开回只"
    "明问日无山水火木月花草鸟鱼马牛羊门车路风雨雪云东西"
    "南北左右高小长短新老白黑红绿朋友老师谢再见早晚饭菜"
    "米面包果苹香蕉口手头耳目鼻身体听走跑跳坐站睡醒笑哭"
)

# bare syllable keys for pinyin input; first reading in ZH_CHARS order wins
EXTRA_SYLLABLES = {"ba": "ba1", "ma": "ma1", "pa": "pa4", "bo": "bo1", "mi": "mi3"}


def build_en() -> list[str]:
    d = cmudict.dict()
    lines = []
    for w in sorted(set(EN_WORDS)):
        prons = d.get(w)
        if not prons:
            raise SystemExit(f"not in CMUdict: {w}")
        lines.append(f"{w}\t{' '.join(prons[0])}")
    return lines


def build_zh() -> list[str]:
    lines = []
    bare: dict[str, str] = dict(EXTRA_SYLLABLES)
    seen = set()
    for ch in ZH_CHARS:
        if ch in seen:
            continue
        seen.add(ch)
        syl = pinyin(ch, style=Style.TONE3, neutral_tone_with_five=True, v_to_u=False)[0][0]
        lines.append(f"{ch}\t{' '.join(split_pinyin(syl))}")
        bare.setdefault(syl.rstrip("12345"), syl)
    for key in sorted(bare):
        lines.append(f"{key}\t{' '.join(split_pinyin(bare[key]))}")
    return lines


def main():
    header = "# word<TAB>phonemes; generated by scripts/build_lexicons.py\n"
    en = build_en()
    zh = build_zh()
    (OUT / "lexicon_en.tsv").write_text(header + "\n".join(en) + "\n", "utf-8")
    (OUT / "lexicon_zh.tsv").write_text(header + "\n".join(zh) + "\n", "utf-8")
    print(f"en: {len(en)} entries, zh: {len(zh)} entries")


if __name__ == "__main__":
    main()
