#!/usr/bin/env python3
"""Write tests/data/unicode_vectors.json: grapheme and NFC oracle cases.

Clusters come from the `regex` module's \\X, normalization from `unicodedata2`.
"""
import json
import random
import sys

import regex
import unicodedata2 as ucd

POOL = (
    [chr(c) for c in range(0x0900, 0x0980)]       # Devanagari
    + ["्", "्", "‍", "‌"]   # virama, joiners (weighted)
    + list("abcXYZ .,?\t") + ["\r", "\n", "\r\n"]
    + ["́", "̈", "̧", "ְ"]   # combining marks
    + [chr(c) for c in (0x1100, 0x1161, 0x11A8, 0xAC00, 0xAC01)]  # Hangul
    + ["\U0001F1EE", "\U0001F1F3", "\U0001F468", "\U0001F469", "\U0001F3FD", "❤", "️"]
    + [chr(c) for c in range(0x0980, 0x09B0)]    # Bengali
    + ["ำ", "؀", "Å", "Å", "Ḋ", "Ḍ"]
)


def main():
    rng = random.Random(20240501)
    graphemes = []
    fixed = ["क", "कि", "ab", "नमस्ते", "क्षत्रिय", "श्री", "हिन्दी", "मराठी", "क्‍ष", "\r\n",
             "\U0001F468‍\U0001F469", "\U0001F1EE\U0001F1F3\U0001F1EE", "", "अब अब क"]
    for text in fixed:
        graphemes.append({"text": text, "clusters": regex.findall(r"\X", text)})
    for _ in range(600):
        n = rng.randint(1, 12)
        text = "".join(rng.choice(POOL) for _ in range(n))
        graphemes.append({"text": text, "clusters": regex.findall(r"\X", text)})
    nfc = []
    for text in ["Å", "Å", "ḍ̇", "क़", "ऩ", "각",
                 "ȩ́", "é", "क़", "कि"]:
        nfc.append({"text": text, "nfc": ucd.normalize("NFC", text)})
    for _ in range(300):
        n = rng.randint(1, 8)
        text = "".join(rng.choice(POOL) for _ in range(n))
        nfc.append({"text": text, "nfc": ucd.normalize("NFC", text)})
    json.dump({"graphemes": graphemes, "nfc": nfc}, sys.stdout, ensure_ascii=False, indent=0)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
