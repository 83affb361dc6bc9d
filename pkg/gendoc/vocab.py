"""Shared vocabulary: special, subword, visual-token, layout-bin and class-token blocks"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .config import VocabConfig
from .errors import ConfigError, VocabError
from .observability import get_logger

logger = get_logger("vocab")

SPECIALS = ("<pad>", "<bos>", "<eos>", "<mask>", "<sep>")
PAD, BOS, EOS, MASK, SEP = range(len(SPECIALS))
NOISE_CLASS = "noise"
BLOCKS = ("special", "subword", "visual", "layout", "class")
FORMAT_HEADER = "# gendoc vocab v1"

_RUNS = re.compile(r"\s|\S+")


@dataclass(frozen=True)
class Vocab:
    """
    Immutable id space. Blocks are contiguous and appended in the order of BLOCKS.

    In char mode every subword is one character. In word mode the table holds every
    observed character followed by frequent words; text is split into whitespace
    characters and non-space runs, runs missing from the table are spelled out.
    """

    mode: str
    subwords: tuple[str, ...]
    visual_size: int
    layout_bins: int
    classes: tuple[str, ...]
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.subwords)) != len(self.subwords):
            raise VocabError("duplicate subword entries", block="subword")
        if NOISE_CLASS not in self.classes:
            raise VocabError("class block must contain the noise class", block="class")
        index = {s: self.subword_offset + i for i, s in enumerate(self.subwords)}
        object.__setattr__(self, "_index", index)

    # ---- block geometry

    @property
    def subword_offset(self) -> int:
        return len(SPECIALS)

    @property
    def visual_offset(self) -> int:
        return self.subword_offset + len(self.subwords)

    @property
    def layout_offset(self) -> int:
        return self.visual_offset + self.visual_size

    @property
    def class_offset(self) -> int:
        return self.layout_offset + self.layout_bins

    @property
    def size(self) -> int:
        return self.class_offset + len(self.classes)

    def __len__(self) -> int:
        return self.size

    def block_range(self, block: str) -> range:
        starts = {
            "special": (0, self.subword_offset),
            "subword": (self.subword_offset, self.visual_offset),
            "visual": (self.visual_offset, self.layout_offset),
            "layout": (self.layout_offset, self.class_offset),
            "class": (self.class_offset, self.size),
        }
        if block not in starts:
            raise VocabError(f"unknown block {block!r}")
        return range(*starts[block])

    def block_of(self, token_id: int) -> str:
        token_id = int(token_id)
        if token_id < 0 or token_id >= self.size:
            raise VocabError(f"id {token_id} outside vocabulary of size {self.size}")
        if token_id < self.subword_offset:
            return "special"
        if token_id < self.visual_offset:
            return "subword"
        if token_id < self.layout_offset:
            return "visual"
        if token_id < self.class_offset:
            return "layout"
        return "class"

    def token_name(self, token_id: int) -> str:
        block = self.block_of(token_id)
        if block == "special":
            return SPECIALS[token_id]
        if block == "subword":
            return self.subwords[token_id - self.subword_offset]
        if block == "visual":
            return f"<v{token_id - self.visual_offset}>"
        if block == "layout":
            return f"<l{token_id - self.layout_offset}>"
        return f"<c:{self.classes[token_id - self.class_offset]}>"

    # ---- text

    def encode_text(self, s: str) -> list[int]:
        ids: list[int] = []
        pieces = _RUNS.findall(s) if self.mode == "word" else list(s)
        for piece in pieces:
            if piece in self._index:
                ids.append(self._index[piece])
                continue
            for ch in piece:
                if ch not in self._index:
                    raise VocabError(f"character {ch!r} not in vocabulary alphabet", block="subword")
                ids.append(self._index[ch])
        return ids

    def can_encode(self, s: str) -> bool:
        return all(ch in self._index for ch in s)

    def decode_text(self, ids: Iterable[int]) -> str:
        """Concatenate subwords; pad/bos are skipped and eos ends the text"""
        out: list[str] = []
        for token_id in ids:
            block = self.block_of(token_id)
            if block == "special":
                if token_id == EOS:
                    break
                if token_id in (PAD, BOS):
                    continue
                raise VocabError(f"special token {SPECIALS[token_id]} inside text", block="special")
            if block != "subword":
                raise VocabError(f"id {int(token_id)} belongs to the {block} block", block=block)
            out.append(self.subwords[token_id - self.subword_offset])
        return "".join(out)

    def text_legal_ids(self) -> np.ndarray:
        """Boolean mask over the vocabulary: subwords plus eos"""
        mask = np.zeros(self.size, dtype=bool)
        mask[self.subword_offset:self.visual_offset] = True
        mask[EOS] = True
        return mask

    def block_mask(self, *blocks: str) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for block in blocks:
            r = self.block_range(block)
            mask[r.start:r.stop] = True
        return mask

    # ---- visual / layout / class tokens

    def visual_token(self, code: int) -> int:
        if not 0 <= code < self.visual_size:
            raise VocabError(f"visual code {code} outside [0, {self.visual_size})", block="visual")
        return self.visual_offset + int(code)

    def visual_code(self, token_id: int) -> int:
        block = self.block_of(token_id)
        if block != "visual":
            raise VocabError(f"id {token_id} is not a visual token", block=block)
        return int(token_id) - self.visual_offset

    def layout_token(self, bin_index: int) -> int:
        if not 0 <= bin_index < self.layout_bins:
            raise VocabError(f"layout bin {bin_index} outside [0, {self.layout_bins})", block="layout")
        return self.layout_offset + int(bin_index)

    def layout_bin(self, token_id: int) -> int:
        block = self.block_of(token_id)
        if block != "layout":
            raise VocabError(f"id {token_id} is not a layout token", block=block)
        return int(token_id) - self.layout_offset

    def class_token(self, name: str) -> int:
        if name not in self.classes:
            raise VocabError(f"unknown class {name!r}", block="class")
        return self.class_offset + self.classes.index(name)

    def class_name(self, token_id: int) -> str:
        block = self.block_of(token_id)
        if block != "class":
            raise VocabError(f"id {token_id} is not a class token", block=block)
        return self.classes[int(token_id) - self.class_offset]

    @property
    def noise_token(self) -> int:
        return self.class_token(NOISE_CLASS)

    # ---- serialization

    def to_text(self) -> str:
        lines = [
            FORMAT_HEADER,
            f"mode {self.mode}",
            f"special 0 {len(SPECIALS)}",
            f"subword {self.subword_offset} {len(self.subwords)}",
            f"visual {self.visual_offset} {self.visual_size}",
            f"layout {self.layout_offset} {self.layout_bins}",
            f"class {self.class_offset} {len(self.classes)}",
            f"size {self.size}",
            "---",
        ]
        lines.extend(json.dumps(self.token_name(i), ensure_ascii=False) for i in range(self.size))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if not lines or lines[0] != FORMAT_HEADER:
            raise VocabError("not a gendoc vocabulary file")
        try:
            sep = lines.index("---")
        except ValueError as e:
            raise VocabError("vocabulary header is not terminated by '---'") from e
        header: dict[str, list[str]] = {}
        for line in lines[1:sep]:
            key, *rest = line.split()
            header[key] = rest
        entries = [json.loads(line) for line in lines[sep + 1:] if line]
        try:
            mode = header["mode"][0]
            sub_off, sub_n = (int(v) for v in header["subword"])
            vis_n = int(header["visual"][1])
            lay_n = int(header["layout"][1])
            cls_off, cls_n = (int(v) for v in header["class"])
            size = int(header["size"][0])
        except (KeyError, IndexError, ValueError) as e:
            raise VocabError(f"malformed vocabulary header: {e}") from e
        if len(entries) != size:
            raise VocabError(f"header declares {size} entries, file has {len(entries)}")
        classes = tuple(name[len("<c:"):-1] for name in entries[cls_off:cls_off + cls_n])
        vocab = cls(
            mode=mode,
            subwords=tuple(entries[sub_off:sub_off + sub_n]),
            visual_size=vis_n,
            layout_bins=lay_n,
            classes=classes,
        )
        if vocab.size != size:
            raise VocabError("block sizes do not add up to the declared size")
        return vocab

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        path = Path(path)
        if not path.is_file():
            raise VocabError(f"vocabulary file not found: {path}")
        return cls.from_text(path.read_bytes().decode("utf-8"))


def build_vocab(corpus: Iterable[str], config: Optional[VocabConfig] = None) -> Vocab:
    """
    Build a vocabulary deterministically from corpus strings.

    Raises:
        VocabError: empty corpus
        ConfigError: subword_size smaller than the observed character set
    """
    config = config or VocabConfig()
    chars: set[str] = set()
    words: Counter[str] = Counter()
    seen = 0
    for text in corpus:
        seen += 1
        chars.update(text)
        if config.mode == "word":
            words.update(w for w in text.split() if len(w) > 1)
    if seen == 0:
        raise VocabError("cannot build a vocabulary from an empty corpus")

    alphabet = sorted(chars)
    if config.subword_size < len(alphabet):
        raise ConfigError(
            f"subword_size {config.subword_size} is smaller than the {len(alphabet)} observed characters"
        )
    subwords = list(alphabet)
    if config.mode == "word":
        room = config.subword_size - len(alphabet)
        ranked = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))
        subwords.extend(w for w, _ in ranked[:room])

    classes = tuple(c for c in config.classes if c != NOISE_CLASS) + (NOISE_CLASS,)
    vocab = Vocab(
        mode=config.mode,
        subwords=tuple(subwords),
        visual_size=config.visual_tokens,
        layout_bins=config.layout_bins,
        classes=classes,
    )
    logger.info(
        f"Built {config.mode} vocabulary: {len(subwords)} subwords, {vocab.size} ids in total"
    )
    return vocab


def resize_layout_bins(vocab: Vocab, new_bins: int) -> Vocab:
    """Same vocabulary with a different layout-bin count (class block shifts accordingly)"""
    if new_bins < 2:
        raise ConfigError("layout bins must be >= 2")
    return replace(vocab, layout_bins=new_bins)
