"""Flat-file formats: tag files, crowd annotation files, run configs.

A tag file holds ``token<TAB>label`` lines with exactly one blank line
between sequences and a trailing newline.  A crowd file starts with an
``#annotators: id1,id2,...`` header and carries one label column per
annotator, where ``_`` marks an annotator who skipped the whole sequence.
Loading is strict: anything malformed raises :class:`DataError` naming the
file, line, and offending content, and well-formed files round-trip
byte-exactly through load and save.

Run configs are ``key = value`` lines over a fixed key set; parsing then
serializing is canonicalizing (sorted keys) and stable.
"""

from __future__ import annotations

from pathlib import Path

from .types import CrowdDataset, CrowdInstance, LabelScheme

ABSENT = "_"


class DataError(ValueError):
    """A malformed input file."""

    def __init__(self, path, line_no: int | None, message: str, content: str | None = None):
        where = f"{path}" if line_no is None else f"{path}, line {line_no}"
        detail = f"{where}: {message}"
        if content is not None:
            detail += f": {content!r}"
        super().__init__(detail)
        self.path = str(path)
        self.line_no = line_no


def _read_lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    if not text:
        raise DataError(path, None, "empty file")
    if not text.endswith("\n"):
        raise DataError(path, None, "missing trailing newline")
    return text.split("\n")[:-1]


def _blocks(path, lines, start_line: int = 1):
    """Blocks of (line_no, line), separated by exactly one blank line."""
    blocks: list[list[tuple[int, str]]] = []
    current: list[tuple[int, str]] = []
    for offset, line in enumerate(lines):
        n = start_line + offset
        if line == "":
            if not current:
                raise DataError(path, n, "unexpected blank line")
            blocks.append(current)
            current = []
        else:
            current.append((n, line))
    if not current:
        raise DataError(path, start_line + len(lines) - 1, "trailing blank line")
    blocks.append(current)
    return blocks


def _check_token(path, n, token):
    if not token:
        raise DataError(path, n, "empty token")


def read_tag_file(path) -> list[tuple[tuple[str, ...], list[str]]]:
    """Token and tag strings per sequence, with no label-scheme commitment."""
    raw = []
    for block in _blocks(path, _read_lines(path)):
        tokens = []
        tags = []
        for n, line in block:
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(path, n, f"expected 2 tab-separated fields, got {len(parts)}", line)
            _check_token(path, n, parts[0])
            if not parts[1]:
                raise DataError(path, n, "empty label", line)
            tokens.append(parts[0])
            tags.append(parts[1])
        raw.append((tuple(tokens), tags))
    return raw


def load_conll(path, scheme: LabelScheme | None = None) -> CrowdDataset:
    """Tag file to a dataset with gold labels and no annotators.

    With ``scheme`` omitted it is inferred from the tags seen.
    """
    raw = read_tag_file(path)
    if scheme is None:
        scheme = LabelScheme.infer(tag for _, tags in raw for tag in tags)
    instances = []
    for tokens, tags in raw:
        try:
            gold = tuple(scheme.index(t) for t in tags)
        except KeyError as e:
            raise DataError(path, None, str(e)) from None
        instances.append(CrowdInstance(tokens, {}, gold))
    return CrowdDataset(scheme, tuple(instances), ())


def save_conll(path, ds: CrowdDataset) -> None:
    """Write each instance's gold labels in canonical tag-file form."""
    blocks = []
    for i, inst in enumerate(ds.instances):
        if inst.gold is None:
            raise ValueError(f"instance {i} has no gold labels")
        lines = []
        for tok, lab in zip(inst.tokens, inst.gold):
            if "\t" in tok or "\n" in tok or not tok:
                raise ValueError(f"token not serializable: {tok!r}")
            lines.append(f"{tok}\t{ds.scheme.labels[lab]}")
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def load_crowd(path, scheme: LabelScheme | None = None) -> CrowdDataset:
    """Crowd file to a dataset with annotations and no gold."""
    lines = _read_lines(path)
    if not lines[0].startswith("#annotators: "):
        raise DataError(path, 1, "missing '#annotators: ' header", lines[0])
    roster = tuple(lines[0][len("#annotators: ") :].split(","))
    if any(not r or r != r.strip() for r in roster):
        raise DataError(path, 1, "malformed annotator id in header", lines[0])
    if len(set(roster)) != len(roster):
        raise DataError(path, 1, "duplicate annotator id in header", lines[0])
    k = len(roster)
    raw = []
    for block in _blocks(path, lines[1:], start_line=2):
        tokens = []
        columns: list[list[str]] = [[] for _ in range(k)]
        for n, line in block:
            parts = line.split("\t")
            if len(parts) != 1 + k:
                raise DataError(
                    path, n, f"expected {1 + k} tab-separated fields, got {len(parts)}", line
                )
            _check_token(path, n, parts[0])
            tokens.append(parts[0])
            for ki, tag in enumerate(parts[1:]):
                if not tag:
                    raise DataError(path, n, "empty label", line)
                columns[ki].append(tag)
        first_line = block[0][0]
        for ki, col in enumerate(columns):
            absent = sum(1 for t in col if t == ABSENT)
            if absent not in (0, len(col)):
                raise DataError(
                    path,
                    first_line,
                    f"annotator {roster[ki]!r} labeled only part of the sequence",
                )
        raw.append((tuple(tokens), columns, first_line))
    if scheme is None:
        scheme = LabelScheme.infer(
            tag for _, columns, _ in raw for col in columns for tag in col if tag != ABSENT
        )
    instances = []
    for tokens, columns, first_line in raw:
        annotations = {}
        for ki, col in enumerate(columns):
            if col[0] == ABSENT:
                continue
            try:
                annotations[roster[ki]] = tuple(scheme.index(t) for t in col)
            except KeyError as e:
                raise DataError(path, first_line, str(e)) from None
        instances.append(CrowdInstance(tokens, annotations, None))
    return CrowdDataset(scheme, tuple(instances), roster)


def save_crowd(path, ds: CrowdDataset) -> None:
    """Write annotations in canonical crowd-file form."""
    if not ds.roster:
        raise ValueError("dataset has no annotator roster")
    for r in ds.roster:
        if not r or r != r.strip() or "," in r or "\t" in r or "\n" in r:
            raise ValueError(f"annotator id not serializable: {r!r}")
    blocks = []
    for inst in ds.instances:
        lines = []
        for j, tok in enumerate(inst.tokens):
            if "\t" in tok or "\n" in tok or not tok:
                raise ValueError(f"token not serializable: {tok!r}")
            cols = [tok]
            for ann_id in ds.roster:
                labels = inst.annotations.get(ann_id)
                cols.append(ABSENT if labels is None else ds.scheme.labels[labels[j]])
            lines.append("\t".join(cols))
        blocks.append("\n".join(lines))
    header = "#annotators: " + ",".join(ds.roster)
    Path(path).write_text(header + "\n" + "\n\n".join(blocks) + "\n", encoding="utf-8")


def load_tokens(path) -> list[tuple[str, ...]]:
    """Token sequences from a tag file or a bare one-token-per-line file."""
    out = []
    for block in _blocks(path, _read_lines(path)):
        tokens = []
        for n, line in block:
            token = line.split("\t")[0]
            _check_token(path, n, token)
            tokens.append(token)
        out.append(tuple(tokens))
    return out


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


CONFIG_KEYS: dict[str, type] = {
    "seed": int,
    "threads": int,
    "n_annotators": int,
    "target_precision": float,
    "precision_spread": float,
    "mix_type_swap": float,
    "mix_boundary_shift": float,
    "mix_entity_drop": float,
    "mix_spurious": float,
    "consistency_hi": float,
    "consistency_lo": float,
    "normalize_consistency": bool,
    "lattice_cap": int,
    "smoothing": float,
    "l2_penalty": float,
    "max_iters": int,
    "rel_tol": float,
    "init_max_iter": int,
    "inner_max_iter": int,
    "opt_tol": float,
    "ds_iters": int,
    "ds_tol": float,
}


def parse_config(text: str, path="<config>") -> dict:
    """``key = value`` lines into a typed dict; unknown keys are errors."""
    out: dict = {}
    for n, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise DataError(path, n, "expected 'key = value'", line)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise DataError(path, n, f"unknown config key {key!r}", line)
        if key in out:
            raise DataError(path, n, f"duplicate config key {key!r}", line)
        caster = _parse_bool if CONFIG_KEYS[key] is bool else CONFIG_KEYS[key]
        try:
            out[key] = caster(value)
        except ValueError as e:
            raise DataError(path, n, f"bad value for {key!r} ({e})", line) from None
    return out


def serialize_config(cfg: dict) -> str:
    """Canonical form: sorted keys, one 'key = value' line each."""
    lines = []
    for key in sorted(cfg):
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        value = cfg[key]
        if CONFIG_KEYS[key] is bool:
            text = "true" if value else "false"
        else:
            text = repr(CONFIG_KEYS[key](value))
        lines.append(f"{key} = {text}")
    return "".join(line + "\n" for line in lines)


def load_config(path) -> dict:
    return parse_config(Path(path).read_text(encoding="utf-8"), path)


def save_config(path, cfg: dict) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
