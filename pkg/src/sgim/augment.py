"""Audio and text augmentation.

Audio augmentation zeroes one contiguous band of frequency rows and one of
time columns (widths floor(ratio * dim), positions uniform). Text
augmentation builds enriched token sequences by synonym insertion, order
permutation, and random-word insertion, each applied independently with
probability 0.5 by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UsageError


@dataclass(frozen=True)
class Vocabulary:
    """Fixed word list; token ids are indices into ``words``."""

    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def id_of(self, word: str) -> int:
        return self._index[word]

    def __contains__(self, word: str) -> bool:
        return word in self._index


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    vocab: Vocabulary

    def __post_init__(self):
        if any(t < 0 or t >= len(self.vocab) for t in self.tokens):
            raise UsageError("token id outside vocabulary")

    def words(self) -> list[str]:
        return [self.vocab.words[t] for t in self.tokens]


# Built-in class labels, their synonyms, and filler words. The synonym table
# stands in for a real thesaurus; edit via load_synonym_table if needed.
CLASS_LABEL_WORDS = (
    ("wave", "crashing"),
    ("rain", "falling"),
    ("thunder", "rolling"),
    ("bird", "singing"),
    ("dog", "barking"),
    ("fire", "crackling"),
    ("wind", "howling"),
    ("engine", "humming"),
)

DEFAULT_SYNONYMS: dict[str, list[str]] = {
    "wave": ["surf"],
    "rain": ["drizzle"],
    "thunder": ["storm"],
    "bird": ["chirp"],
    "dog": ["hound"],
    "fire": ["flame"],
    "wind": ["gust"],
    "engine": ["motor"],
}

_FILLER_WORDS = ("loud", "soft", "distant", "near")


def default_vocabulary() -> Vocabulary:
    words: list[str] = []
    for pair in CLASS_LABEL_WORDS:
        words.extend(pair)
    for syns in DEFAULT_SYNONYMS.values():
        words.extend(syns)
    words.extend(_FILLER_WORDS)
    return Vocabulary(tuple(words))


def load_synonym_table(path) -> dict[str, list[str]]:
    """Parse a 'word: syn1, syn2' file, one entry per line."""
    table: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, _, rest = line.partition(":")
            syns = [s.strip() for s in rest.split(",") if s.strip()]
            if not word.strip() or not syns:
                raise UsageError(f"malformed synonym line: {line!r}")
            table[word.strip()] = syns
    return table


def save_synonym_table(path, table: dict[str, list[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in table:
            fh.write(f"{word}: {', '.join(table[word])}\n")


def spec_augment(mel: np.ndarray, freq_ratio: float, time_ratio: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Zero one frequency band and one time band of a copy of ``mel``.

    Band widths are floor(ratio * dim); zero-width bands are skipped, so
    ratios (0, 0) return an identical copy.
    """
    if not (0.0 <= freq_ratio < 1.0) or not (0.0 <= time_ratio < 1.0):
        raise ParameterError(
            f"mask ratios must lie in [0, 1), got ({freq_ratio}, {time_ratio})")
    out = np.array(mel, dtype=np.float64, copy=True)
    if out.ndim != 2:
        raise ParameterError("mel grid must be 2-D")
    f_bins, t_frames = out.shape
    f_width = int(freq_ratio * f_bins)
    t_width = int(time_ratio * t_frames)
    if f_width > 0:
        f0 = int(rng.integers(0, f_bins - f_width + 1))
        out[f0:f0 + f_width, :] = 0.0
    if t_width > 0:
        t0 = int(rng.integers(0, t_frames - t_width + 1))
        out[:, t0:t0 + t_width] = 0.0
    return out


def augment_text(seq: TokenSeq, synonym_table: dict[str, list[str]],
                 rng: np.random.Generator, p_synonym: float = 0.5,
                 p_permute: float = 0.5, p_insert: float = 0.5) -> TokenSeq:
    """Apply synonym insertion, then permutation, then random insertion.

    Each stage fires independently with its probability and always consumes
    the same rng draws for the stage decision, so the stream layout does not
    depend on the probability values. The original tokens are never removed.
    """
    if not seq.tokens:
        raise UsageError("cannot augment an empty token sequence")
    vocab = seq.vocab
    tokens = list(seq.tokens)

    if rng.random() < p_synonym:
        candidates = [i for i, t in enumerate(tokens)
                      if synonym_table.get(vocab.words[t])]
        if candidates:
            which = candidates[int(rng.integers(0, len(candidates)))]
            syns = [s for s in synonym_table[vocab.words[tokens[which]]]
                    if s in vocab]
            if syns:
                syn_id = vocab.id_of(syns[int(rng.integers(0, len(syns)))])
                pos = int(rng.integers(0, len(tokens) + 1))
                tokens.insert(pos, syn_id)

    if rng.random() < p_permute:
        order = rng.permutation(len(tokens))
        tokens = [tokens[i] for i in order]

    if rng.random() < p_insert:
        extra = int(rng.integers(0, len(vocab)))
        pos = int(rng.integers(0, len(tokens) + 1))
        tokens.insert(pos, extra)

    return TokenSeq(tuple(tokens), vocab)
