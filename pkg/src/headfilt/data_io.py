"""On-disk formats: labeled corpora, trained-model bundles, and the shared
binary container.

Corpus format (UTF-8, one record per line, ``#`` comments ignored):

    id<TAB>text<TAB>edits

where ``edits`` is empty for an error-free sentence or a ``;``-separated
list of ``pos,correct`` groups with 1-based character positions.  The wrong
character is read from the text itself.

Model files use a versioned container: an 8-byte magic, a little-endian
u32 format version, a u64 header length, a JSON header, raw little-endian
array bytes, and a trailing CRC32 over everything before it.  Round-trips
are bit-exact in double precision.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .char_tree import TreeRegistry, parse_ids
from .errors import (
    CorruptFile,
    EmptyCorpus,
    FormatError,
    IoError,
    PositionOutOfRange,
    VersionMismatch,
)
from .similarity import FilterConfig, FilterModel
from .treelstm import EmbedParams
from .vocab import Vocabulary

MAGIC = b"HFBUNDLE"
FORMAT_VERSION = 1


@dataclass
class SentenceRecord:
    id: str
    text: str
    edits: list[tuple[int, str]]  # (1-based position, correct character)

    def wrong_at(self, pos: int) -> str:
        return self.text[pos - 1]

    def labeled_edits(self) -> list[tuple[int, str, str]]:
        return [(pos, self.wrong_at(pos), correct) for pos, correct in self.edits]


@dataclass
class LabeledCorpus:
    sentences: list[SentenceRecord] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)  # (line, message)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


def _parse_edits(text: str, edits_field: str) -> list[tuple[int, str]]:
    edits: list[tuple[int, str]] = []
    if not edits_field:
        return edits
    for group in edits_field.split(";"):
        pos_str, sep, correct = group.partition(",")
        if not sep or len(correct) != 1:
            raise FormatError(f"bad edit group {group!r}")
        try:
            pos = int(pos_str)
        except ValueError:
            raise FormatError(f"bad edit position {pos_str!r}") from None
        if not (1 <= pos <= len(text)):
            raise PositionOutOfRange(
                f"edit position {pos} outside sentence of length {len(text)}")
        if text[pos - 1] == correct:
            raise FormatError(
                f"edit at {pos} replaces {correct!r} with itself")
        edits.append((pos, correct))
    return edits


def load_corpus(path) -> LabeledCorpus:
    """Parse the canonical corpus format; per-record validation failures are
    collected with their line numbers rather than aborting the load."""
    corpus = LabeledCorpus()
    seen_ids: set[str] = set()
    attempted = 0
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc

    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        attempted += 1
        fields = line.split("\t")
        if len(fields) != 3:
            corpus.errors.append(
                (line_no, f"expected 3 tab-separated fields, got {len(fields)}"))
            continue
        sid, text, edits_field = fields
        if not sid or not text:
            corpus.errors.append((line_no, "empty id or text"))
            continue
        if sid in seen_ids:
            corpus.errors.append((line_no, f"duplicate sentence id {sid!r}"))
            continue
        try:
            edits = _parse_edits(text, edits_field)
        except (FormatError, PositionOutOfRange) as exc:
            corpus.errors.append((line_no, str(exc)))
            continue
        seen_ids.add(sid)
        corpus.sentences.append(SentenceRecord(id=sid, text=text, edits=edits))

    if attempted == 0:
        raise EmptyCorpus(f"corpus {path} contains no records")
    if not corpus.sentences:
        raise FormatError(f"corpus {path}: every record failed validation")
    return corpus


def save_corpus(corpus: LabeledCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.sentences:
            edits = ";".join(f"{pos},{correct}" for pos, correct in rec.edits)
            fh.write(f"{rec.id}\t{rec.text}\t{edits}\n")


def apply_edits(record: SentenceRecord) -> str:
    """Corrected sentence text with every gold edit applied."""
    chars = list(record.text)
    for pos, correct in record.edits:
        chars[pos - 1] = correct
    return "".join(chars)


def extract_error_pairs(corpus: LabeledCorpus) -> dict[tuple[str, str], int]:
    """Unique unordered (wrong, correct) pairs with occurrence counts."""
    counts: dict[tuple[str, str], int] = {}
    for rec in corpus.sentences:
        for pos, correct in rec.edits:
            wrong = rec.wrong_at(pos)
            key = (wrong, correct) if wrong <= correct else (correct, wrong)
            counts[key] = counts.get(key, 0) + 1
    return counts


def convert_bakeoff_training(source_path, output_path):
    """Converter stub for the licensed Chinese Spelling Check bake-off
    training releases, which cannot be redistributed with this package.

    The mapping into the canonical corpus format is:

    * each ``<ESSAY>``/``<PASSAGE id="...">`` unit becomes one record; its
      ``id`` attribute is the record id and its text content the sentence;
    * each ``<MISTAKE location="p">`` with ``<WRONG>w</WRONG>`` and
      ``<CORRECTION>c</CORRECTION>`` becomes the edit group ``p,c`` (the
      wrong character is implicit in the text, which must contain ``w`` at
      the 1-based offset ``p``);
    * multiple mistakes in one unit join with ``;``; units without
      mistakes keep an empty third field.

    Years with plain TSV truth files (id, location, correction triples)
    map the same way after joining against the raw text file.
    """
    raise NotImplementedError(
        "supply the licensed bake-off files and implement the mapping above; "
        f"(requested {source_path} -> {output_path})")


# --- generic container ---


def write_container(path, header: dict, arrays: list[np.ndarray]) -> None:
    manifest = []
    blobs = []
    for i, arr in enumerate(arrays):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"index": i, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = dict(header)
    header["array_manifest"] = manifest
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"),
                            ensure_ascii=False).encode("utf-8")
    body = MAGIC + struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<Q", len(head_bytes)) + head_bytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def read_container(path) -> tuple[dict, list[np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 16 or data[:len(MAGIC)] != MAGIC:
        raise CorruptFile(f"{path}: not a model container")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: file format version {version}, this build reads {FORMAT_VERSION}")
    body, crc_bytes = data[:-4], data[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CorruptFile(f"{path}: checksum mismatch (truncated or modified)")
    off = len(MAGIC) + 4
    head_len = struct.unpack_from("<Q", data, off)[0]
    off += 8
    try:
        header = json.loads(data[off:off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header: {exc}") from exc
    off += head_len
    arrays = []
    for entry in header.get("array_manifest", []):
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        blob = body[off:off + nbytes]
        if len(blob) != nbytes:
            raise CorruptFile(f"{path}: payload shorter than manifest")
        arrays.append(np.frombuffer(blob, dtype="<f8").reshape(shape).copy())
        off += nbytes
    return header, arrays


# --- model bundle ---


@dataclass
class ModelBundle:
    """Everything needed to score with, recalibrate, or adapt a trained
    filter: parameters, scale/margin, vocabulary, each character's
    (binarized) decomposition, and run provenance."""

    params: EmbedParams
    config: FilterConfig
    vocab: Vocabulary
    trees: dict[str, str]  # character -> binarized prefix decomposition
    provenance: dict = field(default_factory=dict)

    def registry(self) -> TreeRegistry:
        return TreeRegistry({c: parse_ids(ids) for c, ids in self.trees.items()})

    def filter_model(self) -> FilterModel:
        return FilterModel(self.params, self.config, self.vocab, self.registry())

    def validate(self) -> None:
        self.params.validate_finite()
        comp = set(self.params.component_keys)
        ops = set(self.params.operator_keys)
        registry = self.registry()
        for char in self.vocab:
            tree = registry.tree_for(char)
            missing = set(tree.leaves()) - comp
            if missing:
                raise CorruptFile(
                    f"component table does not cover {char!r}: missing {sorted(missing)}")
            missing_ops = tree.operators() - ops
            if missing_ops:
                raise CorruptFile(
                    f"operator table does not cover {char!r}: missing {sorted(missing_ops)}")


def bundle_from_model(model: FilterModel, provenance: dict | None = None) -> ModelBundle:
    trees = {c: model.registry.tree_for(c).to_ids() for c in model.vocab}
    return ModelBundle(params=model.params, config=model.config,
                       vocab=model.vocab, trees=trees,
                       provenance=dict(provenance or {}))


def save_model(bundle: ModelBundle, path) -> None:
    p = bundle.params
    header = {
        "kind": "filter-model",
        "dim": p.dim,
        "dim_in": p.dim_in,
        "beta": bundle.config.beta,
        "m": bundle.config.m,
        "vocab": bundle.vocab.chars,
        "vocab_hash": bundle.vocab.content_hash(),
        "component_keys": p.component_keys,
        "operator_keys": p.operator_keys,
        "trees": bundle.trees,
        "provenance": bundle.provenance,
    }
    write_container(path, header, p.arrays())


def load_model(path) -> ModelBundle:
    header, arrays = read_container(path)
    if header.get("kind") != "filter-model":
        raise CorruptFile(f"{path}: container holds {header.get('kind')!r}, "
                          "expected a filter model")
    if len(arrays) != 4:
        raise CorruptFile(f"{path}: expected 4 parameter arrays, found {len(arrays)}")
    vocab = Vocabulary(header["vocab"])
    if vocab.content_hash() != header["vocab_hash"]:
        raise CorruptFile(f"{path}: vocabulary hash mismatch")
    params = EmbedParams(header["component_keys"], header["operator_keys"],
                         arrays[0], arrays[1], arrays[2], arrays[3],
                         dim_in=header["dim_in"], dim=header["dim"])
    config = FilterConfig(beta=header["beta"], m=header["m"])
    bundle = ModelBundle(params=params, config=config, vocab=vocab,
                         trees=dict(header["trees"]),
                         provenance=dict(header.get("provenance", {})))
    bundle.validate()
    return bundle
