"""Reference BLEU values for the C++ metrics tests.

Not run by ctest. Regenerate with nltk installed:

    pip install nltk==3.10.3
    python tests/oracles/bleu_oracle.py
"""

import statistics

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

WEIGHTS = (0.25, 0.25, 0.25, 0.25)
SMOOTH = SmoothingFunction().method1  # epsilon 0.1

corpus = [
    "the cat sat on the mat today .",
    "the cat is on the mat",
    "a dog sat on a log , again !",
]
docs = [c.split() for c in corpus]

scores = []
for i, hyp in enumerate(docs):
    refs = [d for j, d in enumerate(docs) if j != i]
    s = sentence_bleu(refs, hyp, weights=WEIGHTS, smoothing_function=SMOOTH)
    scores.append(s)
    print(f"doc {i}: {s!r}")
print("mean:", repr(statistics.fmean(scores)))
print("pstdev:", repr(statistics.pstdev(scores)))

print("disjoint:", repr(sentence_bleu([["alpha", "beta", "gamma", "delta"]], ["one", "two", "three", "four"],
                                      weights=WEIGHTS, smoothing_function=SMOOTH)))
print("fox:", repr(sentence_bleu([["the", "quick", "brown", "fox", "jumps"]],
                                 ["the", "quick", "brown", "dog", "jumps", "high"],
                                 weights=WEIGHTS, smoothing_function=SMOOTH)))
