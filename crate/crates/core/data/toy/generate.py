"""Regenerates the synthetic Arabic-English toy corpora in this directory.

Sentences come from a handful of templates over a small lexicon. The Arabic
side gets random orthographic noise (short vowels, tatweel, alef and ya
variants) so that normalization has something to do.

    python3 generate.py
"""

import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

NOUNS = [
    ("كتاب", "book"), ("بيت", "house"), ("ولد", "boy"), ("مدرسة", "school"),
    ("رجل", "man"), ("قلم", "pen"), ("باب", "door"), ("مدينة", "city"),
    ("سيارة", "car"), ("طالب", "student"), ("معلم", "teacher"), ("شمس", "sun"),
    ("أمير", "prince"), ("إمام", "imam"), ("سوق", "market"), ("مسجد", "mosque"),
    ("رسالة", "letter"), ("طعام", "food"), ("شجرة", "tree"), ("جبل", "mountain"),
]
VERBS = [
    ("ذهب", "went"), ("كتب", "wrote"), ("قرأ", "read"), ("رأى", "saw"),
    ("أكل", "ate"), ("فتح", "opened"), ("دخل", "entered"), ("أحب", "loved"),
]
PREPS = [("إلى", "to"), ("في", "in"), ("من", "from"), ("على", "on")]
POSSESSIVES = [("ها", "her"), ("هم", "their"), ("نا", "our"), ("ك", "your")]
CONJ = [("و", "and"), ("ف", "so")]

# Domain-specific lexicon slices: the in-domain corpus and the test sets
# favour the first half of the nouns.
IN_DOMAIN = NOUNS[:10]

VOWELS = ["َ", "ُ", "ِ", "ْ", "ً"]
TATWEEL = "ـ"
VARIANTS = {"ا": ["أ", "إ", "آ"], "ي": ["ى"]}


def noisy(word, rng, rate):
    out = []
    for i, ch in enumerate(word):
        if ch in VARIANTS and i == len(word) - 1 and ch == "ي" and rng.random() < rate:
            ch = "ى"
        elif ch == "ا" and i == 0 and rng.random() < rate:
            ch = rng.choice(VARIANTS["ا"])
        out.append(ch)
        if rng.random() < rate / 2:
            out.append(rng.choice(VOWELS))
        if i < len(word) - 1 and rng.random() < rate / 6:
            out.append(TATWEEL)
    return "".join(out)


def noun_phrase(rng, nouns):
    ar, en = rng.choice(nouns)
    r = rng.random()
    if r < 0.45:
        return "ال" + ar, "the " + en
    if r < 0.75:
        suf_ar, suf_en = rng.choice(POSSESSIVES)
        return ar + suf_ar, suf_en + " " + en
    return ar, "a " + en


def sentence(rng, nouns):
    subj_ar, subj_en = noun_phrase(rng, nouns)
    verb_ar, verb_en = rng.choice(VERBS)
    t = rng.random()
    if t < 0.4:
        prep_ar, prep_en = rng.choice(PREPS)
        obj_ar, obj_en = noun_phrase(rng, nouns)
        ar = [verb_ar, subj_ar, prep_ar, obj_ar]
        en = [subj_en, verb_en, prep_en, obj_en]
    elif t < 0.75:
        obj_ar, obj_en = noun_phrase(rng, nouns)
        ar = [verb_ar, subj_ar, obj_ar]
        en = [subj_en, verb_en, obj_en]
    else:
        ar_b, en_b = noun_phrase(rng, nouns)
        ar = [verb_ar, subj_ar, "ب" + ar_b if not ar_b.startswith("ال") else "ب" + ar_b]
        en = [subj_en, verb_en, "with " + en_b]
    if rng.random() < 0.3:
        c_ar, c_en = rng.choice(CONJ)
        ar[0] = c_ar + ar[0]
        en = [c_en] + en
    return " ".join(ar) + " .", " ".join(en) + " ."


def paraphrase(en, rng):
    swaps = {"house": "home", "went": "walked", "a ": "one ", "saw": "watched"}
    for a, b in swaps.items():
        if rng.random() < 0.5:
            en = en.replace(a, b)
    return en


def write(name, pairs, refs=1, rng=None):
    ar_lines = [a for a, _ in pairs]
    (HERE / f"{name}.ar").write_text("\n".join(ar_lines) + "\n", encoding="utf-8")
    if refs == 1:
        (HERE / f"{name}.en").write_text("\n".join(e for _, e in pairs) + "\n", encoding="utf-8")
    else:
        (HERE / f"{name}.en0").write_text("\n".join(e for _, e in pairs) + "\n", encoding="utf-8")
        for k in range(1, refs):
            lines = [paraphrase(e, rng) for _, e in pairs]
            (HERE / f"{name}.en{k}").write_text("\n".join(lines) + "\n", encoding="utf-8")


def corpus(seed, n, nouns, noise):
    rng = random.Random(seed)
    pairs = []
    for _ in range(n):
        ar, en = sentence(rng, nouns)
        ar = " ".join(w if w == "." else noisy(w, rng, noise) for w in ar.split())
        pairs.append((ar, en))
    return pairs


def main():
    write("ummah", corpus(1, 150, IN_DOMAIN, 0.05))
    write("isi", corpus(2, 250, NOUNS, 0.2))
    write("ldc2004t17", corpus(3, 250, NOUNS, 0.2))
    write("opus", corpus(4, 300, NOUNS, 0.3))
    write("un", corpus(5, 400, NOUNS, 0.15))
    write("dev", corpus(6, 60, IN_DOMAIN, 0.1))
    write("test", corpus(7, 80, IN_DOMAIN, 0.1), refs=2, rng=random.Random(8))


if __name__ == "__main__":
    main()
