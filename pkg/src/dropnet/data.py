"""Datasets: IDX image files, bag-of-words text, standardisation, batching and splits."""
from __future__ import annotations

import gzip
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import RandomSource

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# a short English stop-word list; the tokenizer lowercases before lookup
STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been before being below
between both but by can could did do does doing down during each few for from further had has have
having he her here hers herself him himself his how i if in into is it its itself just me more most
my myself no nor not now of off on once only or other our ours ourselves out over own same she
should so some such than that the their theirs them themselves then there these they this those
through to too under until up very was we were what when where which while who whom why will with
would you your yours yourself yourselves said also s t
""".split())


class DataError(ValueError):
    """Input data that cannot be read or does not fit the expected format."""


class IdxParseError(DataError):
    """Malformed IDX file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, path=None, offset: int = 0):
        self.path = path
        self.offset = offset
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}byte {offset}: {message}")


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    layout: tuple = field(default=())

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(self.features.shape[0], -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one case")
        if self.labels.shape != (n,):
            raise ValueError(f"{n} feature rows but labels of shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not self.layout:
            self.layout = (self.features.shape[1],)
        if int(np.prod(self.layout)) != self.features.shape[1]:
            raise ValueError(f"layout {self.layout} does not match {self.features.shape[1]} features")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.features[index], self.labels[index], self.class_count, self.layout)

    def with_features(self, features) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, self.class_count, self.layout)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


_IDX_TYPES = {0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
              0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


def parse_idx(buf: bytes, expected_magic: int | None = None, path=None) -> np.ndarray:
    """Decode an IDX byte string into an array with its native element type."""
    if len(buf) < 4:
        raise IdxParseError(f"file too short for a magic number ({len(buf)} bytes)", path, len(buf))
    (magic,) = struct.unpack(">I", buf[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxParseError(f"bad magic number: expected 0x{expected_magic:08x}, found 0x{magic:08x}", path, 0)
    if magic >> 16 != 0:
        raise IdxParseError(f"bad magic number 0x{magic:08x}", path, 0)
    type_code, ndim = (magic >> 8) & 0xFF, magic & 0xFF
    if type_code not in _IDX_TYPES:
        raise IdxParseError(f"unknown element type 0x{type_code:02x}", path, 2)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxParseError(f"truncated header: need {header} bytes, have {len(buf)}", path, len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    dtype = _IDX_TYPES[type_code]
    need = header + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) < need:
        raise IdxParseError(f"truncated payload: expected {need} bytes, have {len(buf)}", path, len(buf))
    if len(buf) > need:
        raise IdxParseError(f"{len(buf) - need} trailing bytes after payload", path, need)
    return np.frombuffer(buf, dtype=dtype, offset=header).reshape(dims)


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    with _open(path) as f:
        return parse_idx(f.read(), expected_magic, path)


def encode_idx(array) -> bytes:
    array = np.asarray(array)
    for code, dtype in _IDX_TYPES.items():
        if array.dtype.kind == dtype.kind and array.dtype.itemsize == dtype.itemsize:
            break
    else:
        raise ValueError(f"no IDX element type for dtype {array.dtype}")
    head = struct.pack(">I", (code << 8) | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=dtype).tobytes()


def write_idx(path, array) -> None:
    Path(path).write_bytes(encode_idx(array))


def load_idx(image_path, label_path, class_count: int | None = None) -> LabeledDataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by dividing by 255."""
    images = read_idx(image_path, IDX_IMAGE_MAGIC)
    labels = read_idx(label_path, IDX_LABEL_MAGIC)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise IdxParseError("expected unsigned-byte payloads", image_path, 2)
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(f"{images.shape[0]} images but {labels.shape[0]} labels", label_path, 4)
    k = class_count if class_count is not None else int(labels.max()) + 1
    layout = (1,) + images.shape[1:]
    return LabeledDataset(images.reshape(images.shape[0], -1) / 255.0, labels, k, layout)


def load_feature_idx(features_path, label_path, class_count: int | None = None) -> LabeledDataset:
    """Like :func:`load_idx` but for any IDX features file; float payloads are used unscaled."""
    features = read_idx(features_path)
    if features.dtype == np.uint8:
        return load_idx(features_path, label_path, class_count)
    labels = read_idx(label_path, IDX_LABEL_MAGIC)
    if features.shape[0] != labels.shape[0]:
        raise IdxParseError(f"{features.shape[0]} rows but {labels.shape[0]} labels", label_path, 4)
    k = class_count if class_count is not None else int(labels.max()) + 1
    return LabeledDataset(features.reshape(features.shape[0], -1).astype(np.float64), labels, k,
                          tuple(features.shape[1:]))


def save_idx(ds: LabeledDataset, image_path, label_path) -> None:
    """Write a dataset whose features are multiples of 1/255 back to IDX bytes."""
    pixels = np.rint(ds.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255 or not np.allclose(pixels / 255.0, ds.features, atol=1e-12):
        raise ValueError("features are not representable as unsigned-byte pixels")
    spatial = ds.layout[1:] if len(ds.layout) == 3 and ds.layout[0] == 1 else ds.layout
    write_idx(image_path, pixels.astype(np.uint8).reshape((len(ds),) + tuple(spatial)))
    write_idx(label_path, ds.labels.astype(np.uint8))


def load_mnist(directory, split: str = "train") -> LabeledDataset:
    prefix = "train" if split == "train" else "t10k"
    directory = Path(directory)

    def find(name):
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                return candidate
        raise FileNotFoundError(directory / name)

    return load_idx(find(f"{prefix}-images-idx3-ubyte"), find(f"{prefix}-labels-idx1-ubyte"), 10)


# --- bag of words ---------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


@dataclass(frozen=True)
class BowVocab:
    tokens: tuple

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, documents, size: int = 2000, stopwords=STOPWORDS) -> "BowVocab":
        """Most frequent non-stop-words, ties broken alphabetically."""
        counts = Counter()
        for doc in documents:
            counts.update(t for t in (tokenize(doc) if isinstance(doc, str) else doc) if t not in stopwords)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(t for t, _ in ranked[:size]))

    @classmethod
    def load(cls, path) -> "BowVocab":
        return cls(tuple(line.strip() for line in Path(path).read_text().splitlines() if line.strip()))

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens))


def bow_vectorize(token_counts, vocab: BowVocab) -> np.ndarray:
    """``log(1 + count)`` per vocabulary entry; out-of-vocabulary tokens are ignored.

    ``token_counts`` is a mapping token -> count, a token list, or raw text.
    """
    if isinstance(token_counts, str):
        token_counts = tokenize(token_counts)
    if not hasattr(token_counts, "items"):
        token_counts = Counter(token_counts)
    v = np.zeros(len(vocab))
    for token, c in token_counts.items():
        if c < 0:
            raise ValueError(f"negative count for {token!r}")
        i = vocab.index.get(token)
        if i is not None:
            v[i] = np.log1p(c)
    return v


def read_text_corpus(path) -> tuple[list[str], list[str]]:
    """Lines of ``label<TAB>text``; returns (labels, texts)."""
    labels, texts = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected 'label<TAB>tokens'")
        label, text = line.split("\t", 1)
        labels.append(label.strip())
        texts.append(text)
    return labels, texts


def corpus_dataset(labels, texts, vocab: BowVocab, classes=None) -> LabeledDataset:
    classes = sorted(set(labels)) if classes is None else list(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    X = np.stack([bow_vectorize(t, vocab) for t in texts])
    y = np.array([lookup[label] for label in labels])
    return LabeledDataset(X, y, len(classes))


def synthetic_corpus(rng: RandomSource, n_docs: int, n_classes: int = 5, vocab_size: int = 200,
                     doc_length: int = 40) -> tuple[list[str], list[str]]:
    """Topic-style toy corpus: each class prefers its own slice of a made-up vocabulary."""
    g = rng.generator
    words = [f"w{i:04d}" for i in range(vocab_size)]
    base = g.dirichlet(np.full(vocab_size, 0.5))
    topics = []
    for k in range(n_classes):
        boost = np.zeros(vocab_size)
        boost[k::n_classes] = 1.0
        p = base + boost / boost.sum()
        topics.append(p / p.sum())
    labels, texts = [], []
    for _ in range(n_docs):
        k = int(g.integers(n_classes))
        idx = g.choice(vocab_size, size=doc_length, p=topics[k])
        labels.append(f"class{k}")
        texts.append(" ".join(words[i] for i in idx))
    return labels, texts


# --- preprocessing and iteration -------------------------------------------


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Zero-mean unit-variance features using training statistics (population variance).

    Returns ``(datasets, mean, sd)`` where ``datasets`` holds the transformed
    training set followed by the transformed ``others``. Constant dimensions map to 0.
    """
    mean = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)

    def apply(ds):
        x = (ds.features - mean) / safe
        x[:, sd == 0] = 0.0
        return ds.with_features(x)

    return [apply(train)] + [apply(ds) for ds in others], mean, sd


def batch_indices(n: int, batch: int, rng: RandomSource) -> list[np.ndarray]:
    if batch < 1:
        raise ValueError("batch size must be at least 1")
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def minibatch_iter(ds: LabeledDataset, batch: int, rng: RandomSource):
    """Yield ``(X, y)`` minibatches covering a fresh shuffle of ``ds`` once."""
    for idx in batch_indices(len(ds), batch, rng):
        yield ds.features[idx], ds.labels[idx]


def split(ds: LabeledDataset, fraction: float, rng: RandomSource):
    """Random disjoint split; ``fraction`` of the cases go to the first part."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(ds)
    k = int(round(fraction * n))
    if k == 0 or k == n:
        raise ValueError(f"split of {n} cases at {fraction} leaves one side empty")
    order = rng.permutation(n)
    return ds.take(np.sort(order[:k])), ds.take(np.sort(order[k:]))
