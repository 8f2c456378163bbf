"""Cell-line feature ingestion: expression matrices, precomputed embedding
files, response tables, and the join that assembles a training dataset.

All inputs are comma-separated UTF-8 text with a header row. Gene alignment
zero-pads genes missing from a profile and drops genes outside the canonical
list; dropped/padded counts are surfaced so dataset shrinkage stays visible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .molgraph import PaddedGraph

FEATURE_SOURCES = ("scgpt", "scfoundation", "raw_expression")

# declared widths; raw_expression takes its width from the canonical gene list
EXPECTED_EMBEDDING_DIM = {"scgpt": 512, "scfoundation": 768}


class IngestError(ValueError):
    """Any schema, parse, domain, or consistency problem in an input table."""


@dataclass
class ExpressionProfile:
    """One cell line's non-negative expression values over its own gene list."""

    cell_line_id: str
    values: np.ndarray
    gene_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.gene_ids),):
            raise IngestError(
                f"cell line {self.cell_line_id!r}: {self.values.shape[0]} values for "
                f"{len(self.gene_ids)} genes")
        if np.any(self.values < 0):
            raise IngestError(f"cell line {self.cell_line_id!r}: negative expression value")


@dataclass
class CellFeatureSet:
    """Per-cell-line feature vectors from one named source."""

    source: str
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.source not in FEATURE_SOURCES:
            raise IngestError(f"unknown feature source {self.source!r}")
        expected = EXPECTED_EMBEDDING_DIM.get(self.source)
        if expected is not None and self.dim != expected:
            raise IngestError(
                f"source {self.source!r} declares {expected}-dim vectors, got {self.dim}")
        for cid, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise IngestError(
                    f"cell line {cid!r}: vector of length {vec.shape[0]}, expected {self.dim}")


@dataclass
class ResponseRecord:
    """One (drug, cell line, IC50, cancer type) ground-truth row."""

    drug_id: str
    cell_line_id: str
    ic50: float
    cancer_type: str | None = None

    def __post_init__(self):
        if not self.drug_id or not self.cell_line_id:
            raise IngestError("response records need non-empty drug and cell line ids")
        if not math.isfinite(self.ic50):
            raise IngestError(
                f"response ({self.drug_id}, {self.cell_line_id}): non-finite ic50")


@dataclass
class JoinStats:
    total: int = 0
    matched: int = 0
    missing_drug: int = 0
    missing_cell: int = 0


@dataclass
class ResponseDataset:
    """Joined records plus the graph and cell lookups they reference."""

    records: list[ResponseRecord]
    graphs: Mapping[str, PaddedGraph]
    cells: CellFeatureSet

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, records: Iterable[ResponseRecord]) -> "ResponseDataset":
        return ResponseDataset(list(records), self.graphs, self.cells)

    def labels(self) -> np.ndarray:
        return np.array([r.ic50 for r in self.records])

    def drug_ids(self) -> list[str]:
        return sorted({r.drug_id for r in self.records})


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{path}: empty file")
    return rows[0], rows[1:]


def load_expression(matrix_file) -> list[ExpressionProfile]:
    """Load an expression matrix: header of gene ids, one row per cell line."""
    header, rows = _read_table(matrix_file)
    if not header or header[0] != "cell_line_id":
        raise IngestError(f"{matrix_file}: first header column must be 'cell_line_id'")
    gene_ids = header[1:]
    profiles = []
    seen = set()
    for lineno, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise IngestError(f"{matrix_file}: row {lineno} has {len(row)} fields, "
                              f"expected {len(header)}")
        cid = row[0]
        if cid in seen:
            raise IngestError(f"{matrix_file}: duplicate cell_line_id {cid!r} at row {lineno}")
        seen.add(cid)
        values = np.empty(len(gene_ids))
        for col, raw in enumerate(row[1:]):
            try:
                values[col] = float(raw)
            except ValueError:
                raise IngestError(f"{matrix_file}: row {lineno} column {col + 2} "
                                  f"is not numeric: {raw!r}") from None
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            bad = int(np.nonzero(~((values >= 0) & np.isfinite(values)))[0][0])
            raise IngestError(f"{matrix_file}: row {lineno} column {bad + 2} is outside "
                              f"the non-negative expression domain")
        profiles.append(ExpressionProfile(cid, values, list(gene_ids)))
    return profiles


def load_gene_list(path) -> list[str]:
    """One gene id per line; order defines the canonical feature layout."""
    genes = [ln.strip() for ln in open(path, encoding="utf-8") if ln.strip()]
    if not genes:
        raise IngestError(f"{path}: empty gene list")
    if len(set(genes)) != len(genes):
        raise IngestError(f"{path}: gene list has duplicate entries")
    return genes


def align_genes(profile: ExpressionProfile, canonical: Sequence[str]) -> np.ndarray:
    """Reorder a profile onto the canonical gene list, zero-padding absentees.

    Genes in the profile but not in the canonical list are dropped; use
    :func:`alignment_stats` to count them for the ingestion report.
    """
    if len(set(canonical)) != len(canonical):
        raise IngestError("canonical gene list has duplicate entries")
    index = {g: i for i, g in enumerate(profile.gene_ids)}
    out = np.zeros(len(canonical))
    for i, gene in enumerate(canonical):
        j = index.get(gene)
        if j is not None:
            out[i] = profile.values[j]
    return out


def alignment_stats(profile: ExpressionProfile, canonical: Sequence[str]) -> tuple[int, int]:
    """(padded, dropped): canonical genes absent from the profile, and
    profile genes absent from the canonical list."""
    have = set(profile.gene_ids)
    want = set(canonical)
    return len(want - have), len(have - want)


def cpm_log1p(values: np.ndarray) -> np.ndarray:
    """Counts-per-million scaling followed by log1p.

    out[i] = log1p(values[i] / sum(values) * 1e6). Division by the total
    makes the result invariant to exact rescaling of the input.
    """
    values = np.asarray(values, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        raise IngestError("cpm normalization needs a positive total, got an all-zero vector")
    return np.log1p(values / total * 1e6)


def load_embeddings(path, expected_source: str) -> CellFeatureSet:
    """Load a precomputed embedding table and check its declared width."""
    if expected_source not in FEATURE_SOURCES:
        raise IngestError(f"unknown feature source {expected_source!r}")
    header, rows = _read_table(path)
    if not header or header[0] != "cell_line_id":
        raise IngestError(f"{path}: first header column must be 'cell_line_id'")
    dim = len(header) - 1
    expected = EXPECTED_EMBEDDING_DIM.get(expected_source)
    if expected is not None and dim != expected:
        raise IngestError(f"{path}: {dim} embedding columns but source "
                          f"{expected_source!r} declares {expected}")
    if not rows:
        raise IngestError(f"{path}: embedding file has no cell lines")
    vectors: dict[str, np.ndarray] = {}
    for lineno, row in enumerate(rows, 2):
        if len(row) != dim + 1:
            raise IngestError(f"{path}: row {lineno} has {len(row) - 1} values, expected {dim}")
        cid = row[0]
        if cid in vectors:
            raise IngestError(f"{path}: duplicate cell_line_id {cid!r} at row {lineno}")
        try:
            vectors[cid] = np.array([float(v) for v in row[1:]])
        except ValueError:
            raise IngestError(f"{path}: row {lineno} has a non-numeric value") from None
    return CellFeatureSet(source=expected_source, dim=dim, vectors=vectors)


def expression_feature_set(profiles: Iterable[ExpressionProfile],
                           canonical: Sequence[str]) -> CellFeatureSet:
    """Raw-expression baseline features: align to the canonical list, then
    apply the same CPM+log1p scaling the embedding pipeline used."""
    vectors = {
        p.cell_line_id: cpm_log1p(align_genes(p, canonical)) for p in profiles
    }
    return CellFeatureSet(source="raw_expression", dim=len(canonical), vectors=vectors)


def load_responses(path) -> list[ResponseRecord]:
    """Load the ground-truth response table.

    Referential checks against available drugs/cells happen at join time,
    where unmatched rows are counted rather than silently dropped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in ("drug_id", "cell_line_id", "ic50") if c not in fields]
        if missing:
            raise IngestError(f"{path}: response table is missing columns {missing}")
        records = []
        for lineno, row in enumerate(reader, 2):
            try:
                ic50 = float(row["ic50"])
            except (TypeError, ValueError):
                raise IngestError(f"{path}: row {lineno} ic50 is not numeric: "
                                  f"{row['ic50']!r}") from None
            if not math.isfinite(ic50):
                raise IngestError(f"{path}: row {lineno} ic50 is not finite")
            records.append(ResponseRecord(
                drug_id=row["drug_id"],
                cell_line_id=row["cell_line_id"],
                ic50=ic50,
                cancer_type=(row.get("cancer_type") or None),
            ))
    return records


def join_dataset(responses: Sequence[ResponseRecord],
                 graphs: Mapping[str, PaddedGraph],
                 cells: CellFeatureSet) -> tuple[ResponseDataset, JoinStats]:
    """Keep records whose drug graph and cell vector both exist.

    Unmatched rows are counted per missing side (a row missing both counts
    in both tallies), never silently dropped from the statistics.
    """
    stats = JoinStats(total=len(responses))
    kept = []
    for rec in responses:
        ok = True
        if rec.drug_id not in graphs:
            stats.missing_drug += 1
            ok = False
        if rec.cell_line_id not in cells.vectors:
            stats.missing_cell += 1
            ok = False
        if ok:
            kept.append(rec)
    stats.matched = len(kept)
    return ResponseDataset(kept, graphs, cells), stats
