"""File formats: the SRSK binary container, TSV cohort files, key=value
configs, report tables, and run manifests.

Container layout: magic "SRSK", u32 LE format version, u64 LE metadata
length, UTF-8 JSON metadata (sorted keys), then float64 LE section blobs in
metadata order. Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import SchemaError
from .features import ConceptVocabulary, ObservationWindow, SliceTensor

MAGIC = b"SRSK"
FORMAT_VERSION = 1

PATIENT_COLUMNS = ["patient_id", "gender", "birth_year", "race", "label", "index_date"]
EVENT_COLUMNS = ["patient_id", "date", "code", "code_type"]


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def write_container(path, kind: str, meta: dict, sections: dict):
    """sections: ordered name -> float64 ndarray; order is recorded in meta."""
    meta = dict(meta)
    meta["kind"] = kind
    meta["sections"] = [
        {"name": name, "shape": list(arr.shape)} for name, arr in sections.items()
    ]
    doc = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(doc)))
        fh.write(doc)
        for arr in sections.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path, expect_kind=None):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise SchemaError(f"{path} is not a SRSK container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise SchemaError(f"{path}: unknown container version {version}")
        (doc_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(doc_len).decode("utf-8"))
        sections = {}
        for sect in meta["sections"]:
            shape = tuple(sect["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise SchemaError(f"{path}: truncated section {sect['name']}")
            sections[sect["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise SchemaError(f"{path}: expected kind {expect_kind!r}, found {meta.get('kind')!r}")
    return meta, sections


def _vocab_to_meta(vocab: ConceptVocabulary):
    return {"codes": [[ct, c] for ct, c in vocab.codes], "variances": list(vocab.variances)}


def _vocab_from_meta(doc):
    return ConceptVocabulary(
        codes=tuple((ct, c) for ct, c in doc["codes"]),
        variances=tuple(float(v) for v in doc["variances"]),
    )


def write_slice_tensor(path, tensor: SliceTensor):
    meta = {
        "window": list(tensor.window.slices),
        "vocabulary": _vocab_to_meta(tensor.vocabulary),
        "patient_ids": list(tensor.patient_ids),
        "labels": [int(v) for v in tensor.labels],
        "split": list(tensor.split),
        "binarized": tensor.binarized,
        "aggregated": tensor.aggregated,
        "unknown_dropped": tensor.unknown_dropped,
    }
    sections = {"counts": tensor.counts, "demographics": tensor.demographics}
    write_container(path, "slice_tensor", meta, sections)


def read_slice_tensor(path) -> SliceTensor:
    meta, sections = read_container(path, "slice_tensor")
    return SliceTensor(
        counts=sections["counts"],
        demographics=sections["demographics"],
        labels=np.asarray(meta["labels"], dtype=np.int64),
        patient_ids=list(meta["patient_ids"]),
        window=ObservationWindow(tuple(meta["window"])),
        vocabulary=_vocab_from_meta(meta["vocabulary"]),
        split=list(meta["split"]),
        binarized=bool(meta["binarized"]),
        aggregated=bool(meta["aggregated"]),
        unknown_dropped=int(meta["unknown_dropped"]),
    )


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, model, vocabulary, window, seeds=None, extra=None):
    from .models import RandomForestModel

    meta = {
        "model_kind": model.kind,
        "vocabulary": _vocab_to_meta(vocabulary),
        "window": list(window.slices),
        "seeds": seeds or {},
    }
    if extra:
        meta.update(extra)
    if isinstance(model, RandomForestModel):
        meta["rf"] = {
            "n_estimators": model.n_estimators,
            "seed": model.seed,
            "bootstrap": model.bootstrap,
            "max_features": model.max_features,
            "n_features": model.n_features,
        }
        sections = {}
        for i, tree in enumerate(model.trees):
            sections[f"tree_{i}"] = np.stack([
                tree.feature.astype(np.float64),
                tree.threshold,
                tree.left.astype(np.float64),
                tree.right.astype(np.float64),
                tree.n_samples.astype(np.float64),
                tree.n_pos.astype(np.float64),
            ])
    else:
        meta["hyper"] = _net_hyper(model)
        sections = {p.name: p.value for p in model.params()}
        meta["param_order"] = [p.name for p in model.params()]
    write_container(path, "checkpoint", meta, sections)


def _net_hyper(model):
    from .models import (Cnn1dClassifier, EmbeddingMLP, LSTMClassifier,
                         LogisticRegressionModel, MLPClassifier)

    if isinstance(model, LogisticRegressionModel):
        return {"n_features": model.n_features}
    if isinstance(model, MLPClassifier):
        return {"n_features": model.n_features, "widths": list(model.widths),
                "dropout": list(model.dropout)}
    if isinstance(model, (LSTMClassifier, EmbeddingMLP)):
        cfg = model.cfg
        return {"v": cfg.v, "d_emb": cfg.d_emb, "h": cfg.h, "t": cfg.t,
                "input_dropout": model.input_dropout}
    if isinstance(model, Cnn1dClassifier):
        cfg = model.cfg
        return {"v": cfg.v, "d_emb": cfg.d_emb, "h": cfg.h, "t": cfg.t,
                "filter_widths": list(model.filter_widths), "channels": model.channels}
    raise SchemaError(f"cannot serialize model {type(model).__name__}")


def read_checkpoint(path):
    """Returns (model, vocabulary, window, meta)."""
    from .models import (Cnn1dClassifier, DecisionTree, EmbedConfig, EmbeddingMLP,
                         LSTMClassifier, LogisticRegressionModel, MLPClassifier,
                         RandomForestModel)
    from .numcore import RngStream

    meta, sections = read_container(path, "checkpoint")
    vocab = _vocab_from_meta(meta["vocabulary"])
    window = ObservationWindow(tuple(meta["window"]))
    kind = meta["model_kind"]
    if kind == "rf":
        rf_meta = meta["rf"]
        model = RandomForestModel(rf_meta["n_estimators"], rf_meta["seed"],
                                  rf_meta["bootstrap"], rf_meta["max_features"])
        model.n_features = rf_meta["n_features"]
        for i in range(len(sections)):
            arr = sections[f"tree_{i}"]
            tree = DecisionTree()
            tree.feature = arr[0].astype(np.int64)
            tree.threshold = arr[1]
            tree.left = arr[2].astype(np.int64)
            tree.right = arr[3].astype(np.int64)
            tree.n_samples = arr[4].astype(np.int64)
            tree.n_pos = arr[5].astype(np.int64)
            model.trees.append(tree)
        return model, vocab, window, meta

    hyper = meta["hyper"]
    rng = RngStream(0)
    if kind == "lr":
        model = LogisticRegressionModel(hyper["n_features"], rng)
    elif kind == "mlp":
        model = MLPClassifier(hyper["n_features"], rng, widths=tuple(hyper["widths"]),
                              dropout=tuple(hyper["dropout"]))
    elif kind == "lstm":
        model = LSTMClassifier(EmbedConfig(hyper["v"], hyper["d_emb"], hyper["h"], hyper["t"]),
                               rng, input_dropout=hyper["input_dropout"])
    elif kind == "embmlp":
        model = EmbeddingMLP(EmbedConfig(hyper["v"], hyper["d_emb"], hyper["h"], hyper["t"]),
                             rng, input_dropout=hyper["input_dropout"])
    elif kind == "cnn":
        model = Cnn1dClassifier(EmbedConfig(hyper["v"], hyper["d_emb"], hyper["h"], hyper["t"]),
                                rng, filter_widths=tuple(hyper["filter_widths"]),
                                channels=hyper["channels"])
    else:
        raise SchemaError(f"unknown model kind {kind!r} in checkpoint")
    for p in model.params():
        if p.name not in sections:
            raise SchemaError(f"checkpoint missing parameter section {p.name!r}")
        if sections[p.name].shape != p.value.shape:
            raise SchemaError(f"checkpoint parameter {p.name!r} has shape "
                              f"{sections[p.name].shape}, expected {p.value.shape}")
        p.value[...] = sections[p.name]
    return model, vocab, window, meta


# ---------------------------------------------------------------------------
# activation exports
# ---------------------------------------------------------------------------

def write_activations(path, activations, meta):
    write_container(path, "activations", meta, {"activations": activations})


def read_activations(path):
    meta, sections = read_container(path, "activations")
    return sections["activations"], meta


# ---------------------------------------------------------------------------
# cohort TSV files
# ---------------------------------------------------------------------------

def write_patients(path, patients: pd.DataFrame):
    patients[PATIENT_COLUMNS].to_csv(path, sep="\t", index=False)


def read_patients(path) -> pd.DataFrame:
    df = _read_tsv(path, PATIENT_COLUMNS)
    df["gender"] = df["gender"].astype(int)
    df["birth_year"] = df["birth_year"].astype(int)
    df["race"] = df["race"].astype(int)
    return df


def write_events(path, events: pd.DataFrame):
    events[EVENT_COLUMNS].to_csv(path, sep="\t", index=False)


def read_events(path) -> pd.DataFrame:
    return _read_tsv(path, EVENT_COLUMNS)


def _read_tsv(path, expected_columns):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path}")
    try:
        df = pd.read_csv(path, sep="\t", dtype=str)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file") from None
    if list(df.columns) != expected_columns:
        raise SchemaError(
            f"{path}: expected columns {expected_columns}, found {list(df.columns)}"
        )
    if df.empty:
        raise SchemaError(f"{path}: no data rows")
    return df


# ---------------------------------------------------------------------------
# key = value configs
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing config file {path}")
    out = {}
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_hash(config: dict) -> str:
    canon = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# reports and manifests
# ---------------------------------------------------------------------------

def format_value(v):
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.6f}"
    if v is None:
        return ""
    return str(v)


def write_table(path, columns, rows):
    """Deterministic TSV report: fixed column order, %.6f floats."""
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(format_value(row.get(c)) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> pd.DataFrame:
    return _read_tsv_any(path)


def _read_tsv_any(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path}")
    return pd.read_csv(path, sep="\t")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, *, config=None, seed=None, inputs=(), outputs=(),
                   timings=None, extra=None):
    doc = {
        "tool_version": __version__,
        "command": command,
        "config_hash": config_hash(config or {}),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
        "timings_s": {k: round(v, 3) for k, v in (timings or {}).items()},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return doc


def write_summary(path, doc: dict):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
