"""Insurer and trusted-third-party roles exchanging serialized payloads.

The insurer holds ``(x, y)`` and sends a representation plus outcomes.  The
third party holds the privatized levels (index-aligned with the payload rows),
trains the group models and returns per-record group predictions and the
discrimination-free premium.  Neither message carries a sensitive column.

Messages use a line-oriented text codec (``.fpx``)::

    ldpfair-fpx
    schema_version 1
    kind payload
    field task regression
    array outcomes rows=3 cols=1
    412.5
    ...
    end

Numbers are written with 17 significant digits so decoding is bit-exact.
"""
from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import fair
from .data import Dataset
from .models import FeedForwardNet, Scaler, TrainConfig
from .privacy import RRParams, rr_params, mechanism_for

SCHEMA_VERSION = 1
MAGIC = "ldpfair-fpx"
SENSITIVE_MARKERS = ("d", "s", "sex", "gender", "sensitive", "privatized")


class CodecError(ValueError):
    code = 10


class SchemaVersionError(CodecError):
    code = 11


class TruncationError(CodecError):
    code = 12


class CountMismatchError(CodecError):
    code = 13


class AuditError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


# --------------------------------------------------------------------------
# messages

@dataclass(eq=False)
class InsurerPayload:
    representation: np.ndarray
    outcomes: np.ndarray
    columns: tuple
    task: str = "regression"
    x_star: np.ndarray | None = None
    x_star_columns: tuple = ()
    mode: str = "raw"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.representation = np.atleast_2d(np.asarray(self.representation, dtype=float))
        self.outcomes = np.asarray(self.outcomes, dtype=float).reshape(-1)
        self.columns = tuple(self.columns)
        n = len(self.outcomes)
        if self.representation.shape[0] != n:
            raise CountMismatchError("representation and outcomes disagree on the row count")
        if len(self.columns) != self.representation.shape[1]:
            raise CountMismatchError("one column name per representation column is required")
        if self.x_star is not None:
            self.x_star = np.atleast_2d(np.asarray(self.x_star, dtype=float))
            if self.x_star.shape[0] != n:
                raise CountMismatchError("x_star and outcomes disagree on the row count")
            if not self.x_star_columns:
                self.x_star_columns = tuple(f"xs{j}" for j in range(self.x_star.shape[1]))
            self.x_star_columns = tuple(self.x_star_columns)

    def __len__(self):
        return len(self.outcomes)


@dataclass(eq=False)
class TTPResult:
    group_predictions: np.ndarray
    dfp: np.ndarray
    p_star_used: np.ndarray
    noise_mode: str
    pi_used: float
    status: str = "ok"
    message: str = ""
    parameters: str = ""
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def failure(cls, message: str, noise_mode: str = "known", pi_used: float = float("nan")):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(2), noise_mode, pi_used,
                   status="error", message=message)

    def check(self, tol: float = 1e-10) -> None:
        if self.status != "ok":
            return
        expected = self.group_predictions @ self.p_star_used
        if np.max(np.abs(expected - self.dfp), initial=0.0) > tol:
            raise ValueError("dfp is not the p_star combination of the group predictions")


@dataclass(eq=False)
class SensitiveStore:
    """Levels held by the third party; ``mechanism=None`` marks an unknown noise rate.

    ``true_levels=True`` marks unprivatized levels (keep probability one).
    """

    s: np.ndarray
    cardinality: int = 2
    mechanism: RRParams | None = None
    true_levels: bool = False

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64).reshape(-1)
        if np.any(self.s < 0) or np.any(self.s >= self.cardinality):
            raise ValueError("store levels outside [0, cardinality)")

    @classmethod
    def from_dataset(cls, dataset: Dataset, mechanism: RRParams | None = None) -> "SensitiveStore":
        if dataset.s is not None:
            return cls(dataset.s, dataset.sensitive_cardinality, mechanism)
        return cls(dataset.levels("d"), dataset.sensitive_cardinality,
                   mechanism_for(1.0, dataset.sensitive_cardinality), true_levels=True)

    def __len__(self):
        return len(self.s)


# --------------------------------------------------------------------------
# codec

def _fmt_row(row) -> str:
    return " ".join("%.17g" % v for v in row)


def _check_token(name: str) -> str:
    if not name or re.search(r"\s", name):
        raise CodecError(f"names must be non-empty and contain no whitespace: {name!r}")
    return name


class _Writer:
    def __init__(self, kind: str, version: int = SCHEMA_VERSION):
        self.lines = [MAGIC, f"schema_version {version}", f"kind {kind}"]

    def field(self, key: str, value) -> None:
        text = str(value)
        if "\n" in text:
            raise CodecError(f"field {key!r} must be a single line")
        self.lines.append(f"field {_check_token(key)} {text}")

    def array(self, key: str, a) -> None:
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        self.lines.append(f"array {_check_token(key)} rows={a.shape[0]} cols={a.shape[1]}")
        self.lines.extend(_fmt_row(r) for r in a)

    def text(self, key: str, body: str) -> None:
        body_lines = body.splitlines()
        self.lines.append(f"text {_check_token(key)} lines={len(body_lines)}")
        self.lines.extend(body_lines)

    def finish(self) -> bytes:
        return ("\n".join(self.lines + ["end"]) + "\n").encode("ascii")


def _parse(data: bytes, kind: str) -> tuple[dict, dict, dict]:
    try:
        lines = data.decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise CodecError("message is not ASCII text") from exc
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 3 or lines[0] != MAGIC:
        raise CodecError("not an fpx message")
    version_line = lines[1].split()
    if len(version_line) != 2 or version_line[0] != "schema_version":
        raise CodecError("missing schema_version header")
    if version_line[1] != str(SCHEMA_VERSION):
        raise SchemaVersionError(
            f"schema_version {version_line[1]} is not supported (expected {SCHEMA_VERSION})"
        )
    if lines[2] != f"kind {kind}":
        raise CodecError(f"expected a {kind} message, got {lines[2]!r}")

    fields_, arrays, texts = {}, {}, {}
    i = 3
    while True:
        if i >= len(lines):
            raise TruncationError("message ended before the end marker")
        head = lines[i]
        if head == "end":
            if i != len(lines) - 1:
                raise CodecError("data after the end marker")
            break
        tag, _, rest = head.partition(" ")
        if tag == "field":
            key, _, value = rest.partition(" ")
            fields_[key] = value
            i += 1
        elif tag == "array":
            m = re.fullmatch(r"(\S+) rows=(\d+) cols=(\d+)", rest)
            if not m:
                raise CodecError(f"malformed array header {head!r}")
            key, rows, cols = m.group(1), int(m.group(2)), int(m.group(3))
            body = lines[i + 1:i + 1 + rows]
            if len(body) < rows or any(ln in ("end",) or ln.startswith(("array ", "field ", "text "))
                                       for ln in body):
                raise TruncationError(f"array {key!r} declares {rows} rows but fewer follow")
            a = np.empty((rows, cols))
            for r, ln in enumerate(body):
                vals = ln.split() if cols else []
                if len(vals) != cols:
                    raise CountMismatchError(
                        f"array {key!r} row {r} has {len(vals)} values, expected {cols}"
                    )
                try:
                    a[r] = [float(v) for v in vals]
                except ValueError as exc:
                    raise CodecError(f"array {key!r} row {r}: {exc}") from exc
            arrays[key] = a
            i += 1 + rows
        elif tag == "text":
            m = re.fullmatch(r"(\S+) lines=(\d+)", rest)
            if not m:
                raise CodecError(f"malformed text header {head!r}")
            key, count = m.group(1), int(m.group(2))
            if i + 1 + count > len(lines) - 1:
                raise TruncationError(f"text {key!r} declares {count} lines but fewer follow")
            texts[key] = "\n".join(lines[i + 1:i + 1 + count]) + ("\n" if count else "")
            i += 1 + count
        else:
            raise CodecError(f"unknown record {head!r}")
    return fields_, arrays, texts


def _need(mapping, key, what="field"):
    if key not in mapping:
        raise CodecError(f"missing {what} {key!r}")
    return mapping[key]


def _names(value: str, count: int, key: str) -> tuple:
    names = tuple(value.split()) if value else ()
    if len(names) != count:
        raise CountMismatchError(f"{key} lists {len(names)} names for {count} columns")
    return names


def dumps_payload(p: InsurerPayload) -> bytes:
    audit_payload(p)
    w = _Writer("payload", p.schema_version)
    w.field("task", p.task)
    w.field("mode", p.mode)
    w.field("columns", " ".join(_check_token(c) for c in p.columns))
    w.array("representation", p.representation)
    w.array("outcomes", p.outcomes)
    if p.x_star is not None:
        w.field("x_star_columns", " ".join(_check_token(c) for c in p.x_star_columns))
        w.array("x_star", p.x_star)
    return w.finish()


def loads_payload(data: bytes) -> InsurerPayload:
    f, a, _ = _parse(data, "payload")
    rep = _need(a, "representation", "array")
    out = _need(a, "outcomes", "array")
    if out.shape[1] != 1 or out.shape[0] != rep.shape[0]:
        raise CountMismatchError("outcomes must be one column with one row per representation row")
    xs = a.get("x_star")
    p = InsurerPayload(
        representation=rep,
        outcomes=out[:, 0],
        columns=_names(_need(f, "columns"), rep.shape[1], "columns"),
        task=_need(f, "task"),
        x_star=xs,
        x_star_columns=_names(f.get("x_star_columns", ""), xs.shape[1], "x_star_columns")
        if xs is not None else (),
        mode=f.get("mode", "raw"),
    )
    audit_payload(p)
    return p


def dumps_result(r: TTPResult) -> bytes:
    w = _Writer("result", r.schema_version)
    w.field("status", r.status)
    w.field("message", r.message.replace("\n", " "))
    w.field("noise_mode", r.noise_mode)
    w.field("pi_used", "%.17g" % r.pi_used)
    w.array("group_predictions", r.group_predictions)
    w.array("dfp", r.dfp)
    w.array("p_star_used", r.p_star_used)
    if r.parameters:
        w.text("parameters", r.parameters)
    data = w.finish()
    audit_bytes(data)
    return data


def loads_result(data: bytes) -> TTPResult:
    f, a, t = _parse(data, "result")
    gp = _need(a, "group_predictions", "array")
    dfp = _need(a, "dfp", "array")
    p_star = _need(a, "p_star_used", "array")
    if dfp.shape[0] != gp.shape[0] or (dfp.shape[0] and dfp.shape[1] != 1):
        raise CountMismatchError("dfp must have one value per group-prediction row")
    if p_star.shape[0] != gp.shape[1]:
        raise CountMismatchError("p_star_used must have one entry per group")
    return TTPResult(gp, dfp[:, 0] if dfp.size else np.zeros(0), p_star[:, 0],
                     _need(f, "noise_mode"), float(_need(f, "pi_used")),
                     status=_need(f, "status"), message=f.get("message", ""),
                     parameters=t.get("parameters", ""))


def dumps_store(store: SensitiveStore) -> bytes:
    w = _Writer("store")
    w.field("cardinality", store.cardinality)
    w.field("true_levels", int(store.true_levels))
    if store.mechanism is None:
        w.field("mechanism", "unknown")
    else:
        w.field("mechanism", "randomized_response")
        w.field("epsilon", "%.17g" % store.mechanism.epsilon)
        w.field("pi", "%.17g" % store.mechanism.pi)
    w.array("s", store.s)
    return w.finish()


def loads_store(data: bytes) -> SensitiveStore:
    f, a, _ = _parse(data, "store")
    k = int(_need(f, "cardinality"))
    mech = None
    if _need(f, "mechanism") != "unknown":
        pi = float(_need(f, "pi"))
        mech = mechanism_for(pi, k) if pi == 1.0 else rr_params(float(_need(f, "epsilon")), k)
        if mech.pi != pi:
            mech = RRParams(mech.epsilon, k, pi, (1 - pi) / (k - 1))
    s = _need(a, "s", "array")
    return SensitiveStore(s[:, 0].astype(np.int64), k, mech, bool(int(f.get("true_levels", "0"))))


# --------------------------------------------------------------------------
# audit

def _is_sensitive_name(name: str, extra=()) -> bool:
    low = name.lower()
    base = re.split(r"[=:.\[]", low, maxsplit=1)[0]
    markers = set(SENSITIVE_MARKERS) | {m.lower() for m in extra if m}
    return low in markers or base in markers


def audit_payload(p: InsurerPayload, extra_markers=()) -> None:
    """Refuse payloads that declare any column named like a sensitive field."""
    for name in (*p.columns, *p.x_star_columns):
        if _is_sensitive_name(name, extra_markers):
            raise AuditError(f"payload column {name!r} looks like a sensitive attribute")


def audit_bytes(data: bytes, extra_markers=()) -> None:
    """Reject serialized messages that name a sensitive column in any header."""
    for line in data.decode("ascii").split("\n"):
        parts = line.split()
        if len(parts) >= 2 and parts[0] in ("array", "text") and _is_sensitive_name(parts[1], extra_markers):
            raise AuditError(f"message carries a sensitive block {parts[1]!r}")
        if len(parts) >= 2 and parts[0] == "field" and parts[1] in ("columns", "x_star_columns"):
            for name in parts[2:]:
                if _is_sensitive_name(name, extra_markers):
                    raise AuditError(f"message declares sensitive column {name!r}")


# --------------------------------------------------------------------------
# roles

def insurer_prepare(dataset: Dataset, mode: str = "raw", arch=(5, 5, 5), kind: str | None = None,
                    cfg: TrainConfig = TrainConfig(), include_x_star: bool = False,
                    sensitive_names=()) -> tuple[InsurerPayload, FeedForwardNet | None]:
    """Build the insurer's message; the dataset's ``d``/``s`` columns are never read.

    ``mode="raw"`` sends standardized features, ``mode="transformed"`` trains
    the supervised net and sends its last hidden layer.  ``include_x_star``
    adds standardized raw features for noise estimation.
    """
    x = dataset.x
    if mode == "raw":
        rep = Scaler.fit(x).transform(x)
        columns = tuple(n.replace(" ", "_") for n in dataset.feature_names) or tuple(
            f"x{j}" for j in range(x.shape[1]))
        net = None
    elif mode == "transformed":
        plain = dataset.replace(d=None, s=None)
        net = fair.train_transformation(plain, arch, kind, cfg)
        rep = net.representation(x)
        columns = tuple(f"z{j}" for j in range(rep.shape[1]))
    else:
        raise ValueError("mode must be 'raw' or 'transformed'")
    xs = Scaler.fit(x).transform(x) if include_x_star else None
    payload = InsurerPayload(rep, dataset.y, columns, dataset.task, xs, mode=mode)
    audit_payload(payload, sensitive_names)
    return payload, net


@dataclass
class ServeOptions:
    pi: float | None = None
    estimate_noise: bool = False
    n1: int = 4
    j_star: int | None = None
    hypothesis: str = "linear"
    kind: str | None = None
    cfg: TrainConfig = field(default_factory=TrainConfig)
    p_star: np.ndarray | None = None
    export_parameters: bool = False


def payload_dataset(payload: InsurerPayload, store: SensitiveStore) -> Dataset:
    if len(payload) != len(store):
        raise AlignmentError(f"payload has {len(payload)} rows but the store has {len(store)}")
    return Dataset(x=payload.representation, y=payload.outcomes, s=store.s,
                   feature_names=payload.columns, sensitive_cardinality=store.cardinality,
                   task=payload.task)


def ttp_serve(payload: InsurerPayload, store: SensitiveStore,
              options: ServeOptions = ServeOptions()) -> TTPResult:
    """Train on the payload plus stored levels and return premiums, never the levels."""
    audit_payload(payload)
    data = payload_dataset(payload, store)
    unknown = options.estimate_noise or (store.mechanism is None and options.pi is None)
    noise_mode = "estimated" if unknown else "known"
    try:
        if store.true_levels and not unknown and options.pi in (None, 1.0):
            gms, report = fair.mptp(data.replace(d=store.s, s=None), options.hypothesis,
                                    options.kind, options.cfg, options.p_star)
        else:
            pi = None if unknown else (options.pi if options.pi is not None else store.mechanism.pi)
            gms, report = fair.mptp_ldp(data, pi, options.hypothesis, options.kind, options.cfg,
                                        options.p_star, n1=options.n1, j_star=options.j_star,
                                        x_star=payload.x_star)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return TTPResult.failure(f"{type(exc).__name__}: {exc}", noise_mode)
    params = fair.dumps_model_set(gms) if options.export_parameters else ""
    result = TTPResult(report.raw_best_estimate, report.raw_dfp, report.p_star, noise_mode,
                       float(gms.pi), parameters=params)
    result.check()
    return result


def insurer_receive(result: TTPResult):
    """Premium table for the insurer; raises if the third party reported a failure."""
    if result.status != "ok":
        raise RuntimeError(f"third party reported an error: {result.message}")
    result.check()
    cols = {"record_id": np.arange(len(result.dfp))}
    for j in range(result.group_predictions.shape[1]):
        cols[f"mu_{j}"] = result.group_predictions[:, j]
    cols["dfp"] = result.dfp
    return pd.DataFrame(cols)


# --------------------------------------------------------------------------
# session manifest

def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_session(path, entries: dict) -> None:
    """Plain ``key = value`` lines, merged into any existing manifest."""
    current = read_session(path) if os.path.exists(path) else {}
    current.update({k: str(v) for k, v in entries.items()})
    current.setdefault("schema_version", str(SCHEMA_VERSION))
    current.setdefault("join_key", "row_index")
    with open(path, "w") as fh:
        fh.writelines(f"{k} = {current[k]}\n" for k in sorted(current))


def read_session(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out

