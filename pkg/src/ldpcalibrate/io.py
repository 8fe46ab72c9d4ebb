"""File formats: report streams, frequency CSVs, model JSON, results.

Every text file starts with a one-line ``# {json}`` header carrying its
metadata; CSV readers skip it and hand it back as a dict.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .calibrate import NoiseModel, PriorModel, prior_pmf, discrete_prior, DISCRETE
from .exceptions import ParseError
from .protocols import OLH, KRR, ReportBatch, FrequencyTable

__all__ = ["dump_header", "read_header", "write_reports", "read_reports",
           "write_table", "read_table", "model_to_dict", "model_from_dict",
           "write_model", "read_model", "write_records_csv", "write_json", "fmt"]

UNDEFINED = "undefined"
RECORD_COLUMNS = ("epsilon", "variant", "trial", "metric", "threshold", "value")


def fmt(x) -> str:
    """Round-trippable text for a number; empty for a missing value."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(x)


def dump_header(meta: dict) -> str:
    return "# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n"


def read_header(line: str) -> dict:
    if not line.startswith("# "):
        raise ParseError(1, "missing '# {json}' header line")
    try:
        return json.loads(line[2:])
    except json.JSONDecodeError as exc:
        raise ParseError(1, f"header is not valid JSON: {exc}") from None


def write_reports(stream, batch: ReportBatch, meta: dict) -> None:
    """One report per line after the header.

    Unary reports are hex strings, most significant bit first for item 1;
    OLH reports are ``seed,bucket``; k-RR reports are the item index.
    """
    stream.write(dump_header(meta))
    if batch.kind == OLH:
        for s, b in zip(batch.seeds.tolist(), batch.buckets.tolist()):
            stream.write(f"{s},{b}\n")
    elif batch.kind == KRR:
        for item in batch.items.tolist():
            stream.write(f"{item}\n")
    else:
        packed = np.packbits(batch.bits.astype(np.uint8), axis=1, bitorder="big")
        for row in packed:
            stream.write(row.tobytes().hex() + "\n")


def read_reports(stream):
    """Return ``(meta, batch)``."""
    meta = read_header(stream.readline())
    for key in ("protocol", "d", "epsilon"):
        if key not in meta:
            raise ParseError(1, f"report header lacks {key!r}")
    kind = meta["protocol"]
    lines = [ln.strip() for ln in stream if ln.strip()]
    try:
        return meta, _parse_reports(kind, meta, lines)
    except (ValueError, IndexError) as exc:
        raise ParseError(None, f"malformed report line: {exc}") from None


def _parse_reports(kind, meta, lines):
    if kind == OLH:
        pairs = [ln.split(",") for ln in lines]
        return ReportBatch(OLH, seeds=np.array([int(s) for s, _ in pairs], dtype=np.uint64),
                           buckets=np.array([int(b) for _, b in pairs], dtype=np.int64))
    if kind == KRR:
        return ReportBatch(KRR, items=np.array([int(x) for x in lines], dtype=np.int64))
    size = int(meta["d"]) + int(meta.get("dummy_count", 0))
    raw = np.frombuffer(bytes.fromhex("".join(lines)), dtype=np.uint8).reshape(len(lines), -1)
    bits = np.unpackbits(raw, axis=1, bitorder="big")[:, :size]
    return ReportBatch(kind, bits=bits)


def write_table(stream, table: FrequencyTable, meta: dict, item_ids=None) -> None:
    """``item_id,frequency`` rows; ids default to ``1..d``."""
    ids = np.arange(1, table.d + 1) if item_ids is None else np.asarray(item_ids)
    stream.write(dump_header({**meta, "label": table.label, "n": int(table.n), "d": table.d}))
    stream.write("item_id,frequency\n")
    for i, v in zip(ids.tolist(), table.values.tolist()):
        stream.write(f"{i},{fmt(v)}\n")


def read_table(stream):
    """Return ``(meta, table, item_ids)``."""
    meta = read_header(stream.readline())
    reader = csv.DictReader(stream)
    ids, values = [], []
    for row in reader:
        try:
            ids.append(int(row["item_id"]))
            values.append(float(row["frequency"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(reader.line_num + 1, f"bad table row {row!r}: {exc}") from None
    if "n" not in meta:
        raise ParseError(1, "header lacks 'n'")
    table = FrequencyTable(np.array(values), int(meta["n"]), meta.get("label", "estimated"))
    return meta, table, np.array(ids, dtype=np.int64)


def model_to_dict(prior: PriorModel, noise: NoiseModel, extra: dict | None = None) -> dict:
    doc = {
        "family": prior.family,
        "parameters": prior.params,
        "support": [prior.k_min, prior.k_max],
        "variance": noise.variance,
        "diagnostics": {k: v for k, v in prior.diagnostics.items()},
    }
    if prior.family == DISCRETE:
        doc["pmf"] = prior.pmf.tolist()
    doc.update(extra or {})
    return doc


def model_from_dict(doc: dict):
    """Return ``(prior, noise)``."""
    k_min, k_max = doc["support"]
    if doc["family"] == DISCRETE:
        prior = discrete_prior(k_min, doc["pmf"])
    else:
        prior = prior_pmf(doc["family"], doc["parameters"], (k_min, k_max))
    prior.diagnostics = dict(doc.get("diagnostics", {}))
    return prior, NoiseModel(float(doc["variance"]))


def write_json(stream, doc) -> None:
    json.dump(doc, stream, sort_keys=True, indent=2, allow_nan=False)
    stream.write("\n")


def write_model(stream, prior: PriorModel, noise: NoiseModel, extra: dict | None = None) -> None:
    write_json(stream, model_to_dict(prior, noise, extra))


def read_model(stream):
    return model_from_dict(json.load(stream))


def write_records_csv(stream, records, meta: dict | None = None) -> None:
    if meta is not None:
        stream.write(dump_header(meta))
    stream.write(",".join(RECORD_COLUMNS) + "\n")
    for r in records:
        value = UNDEFINED if r["value"] is None else fmt(r["value"])
        stream.write(f"{fmt(r['epsilon'])},{r['variant']},{r['trial']},{r['metric']},"
                     f"{fmt(r['threshold'])},{value}\n")


def records_to_text(records, meta=None) -> str:
    buf = io.StringIO()
    write_records_csv(buf, records, meta)
    return buf.getvalue()
