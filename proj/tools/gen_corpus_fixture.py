#!/usr/bin/env python3
"""Write tests/data/devanagari_corpus.txt: 1,000 synthetic Hindi/Marathi lines.

Sentences are random draws from a fixed word list that covers conjuncts,
nukta forms, candrabindu, visarga, Devanagari digits and dandas.
"""
import random

HINDI = ("भारत दिल्ली राजधानी है की का के में से पर और नदी गंगा हिमालय पर्वत विद्यालय "
         "छात्र शिक्षक पुस्तक क्षेत्र त्रिकोण ज्ञान श्रीमान प्रश्न उत्तर संविधान स्वतंत्रता "
         "आंदोलन इतिहास ज़मीन फ़िल्म क़लम ग़ज़ल हँसी चाँद दुःख अंतःकरण कृषि ऋषि ॐ "
         "वर्ष सन् सरकार राज्य जनसंख्या भाषा हिन्दी संस्कृत उद्योग व्यापार").split()
MARATHI = ("महाराष्ट्र मुंबई पुणे राजधानी आहे आणि च्या मध्ये होते शिवाजी महाराज किल्ला "
           "सह्याद्री नदी गोदावरी शाळा विद्यार्थी पुस्तक ळ पाऊस शेतकरी ज्ञानेश्वर संत "
           "मराठी भाषा साहित्य प्रश्न उत्तर वर्ष लोकसंख्या").split()
DIGITS = "०१२३४५६७८९"


def number(rng):
    return "".join(rng.choice(DIGITS) for _ in range(rng.randint(1, 4)))


def main():
    rng = random.Random(7)
    lines = []
    for i in range(1000):
        words = HINDI if i % 2 == 0 else MARATHI
        toks = []
        for _ in range(rng.randint(3, 14)):
            r = rng.random()
            if r < 0.08:
                toks.append(number(rng))
            elif r < 0.12:
                toks.append(rng.choice(words) + ",")
            else:
                toks.append(rng.choice(words))
        end = rng.choice(["।", "।", "?", "॥", "", "!"])
        lines.append(" ".join(toks) + end)
    with open("tests/data/devanagari_corpus.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
