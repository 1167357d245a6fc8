"""Experiment configuration and record files.

Record files start with one JSON header line. The body is either one JSON
object per bin (``"encoding": "jsonl"``) or packed little-endian values
(``"encoding": "binary"``: float64 for diffusive channels, int64 counts for
jump channels, record-major then bin-major). Floats are written with their
shortest round-trip representation, so write/read is bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterator, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .core import (
    Channel,
    MeasurementModel,
    ModelError,
    coherent_dm,
    destroy,
    excited_state,
    fock_dm,
    ground_state,
    sigma_minus,
    sigma_x,
    sigma_y,
    sigma_z,
)
from .instrument import DigitizedRecord

FORMAT = "robinet-record"
FORMAT_VERSION = 1


class RecordFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration schema

Complex = tuple[float, float]


class NamedOp(BaseModel):
    """``scale * op`` with ``op`` a named operator."""

    model_config = ConfigDict(extra="forbid")
    op: Literal["sigma_x", "sigma_y", "sigma_z", "sigma_minus", "a", "a2", "number", "identity", "zero"]
    scale: float | Complex = 1.0


class OpSum(BaseModel):
    model_config = ConfigDict(extra="forbid")
    terms: list[NamedOp]


MatrixSpec = Union[list[list[Complex]], NamedOp, OpSum, str]


class ChannelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    L: MatrixSpec
    eta: float = Field(1.0, ge=0.0, le=1.0)
    kind: Literal["diffusive", "jump"] = "diffusive"
    dark_rate: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _dark_only_for_jumps(self):
        if self.kind == "diffusive" and self.dark_rate != 0:
            raise ValueError("dark_rate must be 0 for diffusive channels")
        return self


class ModelSpec(BaseModel):
    """Either a preset (``fig1``: driven decaying qubit, ``deflate``: two-photon
    loss) or explicit operators. Preset parameters are ``eta``, ``omega``
    (fig1 detuning) and ``dim`` (deflate)."""

    model_config = ConfigDict(extra="forbid")
    preset: Literal["fig1", "deflate"] | None = None
    eta: float = Field(0.8, ge=0.0, le=1.0)
    omega: float = 0.0
    dim: int | None = Field(None, ge=1)
    H: MatrixSpec | None = None
    channels: list[ChannelSpec] = []
    unmonitored: list[MatrixSpec] = []

    @model_validator(mode="after")
    def _complete(self):
        if self.preset is None:
            if self.H is None:
                raise ValueError("H is required when no preset is given")
        elif self.preset == "deflate" and self.dim is None:
            raise ValueError("deflate preset needs dim")
        return self


class StateSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    preset: Literal["excited", "ground", "fock", "coherent", "mixed"] | None = None
    n: int = Field(0, ge=0)
    alpha: float | Complex = 0.0
    matrix: list[list[Complex]] | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.preset is None) == (self.matrix is None):
            raise ValueError("give exactly one of preset or matrix")
        return self


class ExperimentConfig(BaseModel):
    """Everything needed to rerun an experiment; all randomness comes from ``seed``.

    Times (``dt``, ``dt_fine``, ``T``) are in physical units and multiplied by
    ``time_scale`` to obtain the dimensionless times of the core.
    """

    model_config = ConfigDict(extra="forbid")
    model: ModelSpec
    rho0: StateSpec
    dt: float = Field(gt=0)
    n_bins: int = Field(2, ge=0)
    dt_fine: float | None = Field(None, gt=0)
    seed: int = Field(0, ge=0)
    n_traj: int = Field(1, ge=1)
    method: Literal["robinet", "kraus1", "euler"] = "robinet"
    sampler: Literal["quadrature", "polynomial"] = "quadrature"
    n_p: int = Field(31, ge=2)
    order: int = Field(4, ge=0, le=12)
    time_scale: float = Field(1.0, gt=0)

    @field_validator("dt", "dt_fine")
    @classmethod
    def _finite(cls, v):
        if v is not None and not math.isfinite(v):
            raise ValueError("must be finite")
        return v

    @property
    def core_dt(self) -> float:
        return self.dt * self.time_scale

    @property
    def core_dt_fine(self) -> float:
        return (self.dt_fine if self.dt_fine is not None else self.dt / 1000) * self.time_scale

    def fingerprint(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESETS: dict[str, dict] = {
    "fig1": {
        "model": {"preset": "fig1", "eta": 0.8},
        "rho0": {"preset": "excited"},
        "dt": 1.0,
        "n_bins": 2,
        "dt_fine": 1e-3,
        "n_traj": 100_000,
    },
    "fig3": {
        "model": {"preset": "fig1", "eta": 0.8, "omega": 1.0},
        "rho0": {"preset": "excited"},
        "dt": 0.1,
        "n_bins": 50,
        "dt_fine": 1e-3,
        "n_traj": 1000,
    },
}


def _complex(z) -> complex:
    return complex(z[0], z[1]) if isinstance(z, (tuple, list)) else complex(z)


def _named(op: str, dim: int | None) -> np.ndarray:
    qubit = {"sigma_x": sigma_x, "sigma_y": sigma_y, "sigma_z": sigma_z, "sigma_minus": sigma_minus}
    if op in qubit:
        return qubit[op]()
    if dim is None:
        raise ModelError(f"operator {op!r} needs model.dim")
    a = destroy(dim)
    return {
        "a": a,
        "a2": a @ a,
        "number": a.conj().T @ a,
        "identity": np.eye(dim, dtype=complex),
        "zero": np.zeros((dim, dim), dtype=complex),
    }[op]


def build_matrix(spec: MatrixSpec, dim: int | None, path: str) -> np.ndarray:
    try:
        if isinstance(spec, str):
            return _named(spec, dim)
        if isinstance(spec, NamedOp):
            return _complex(spec.scale) * _named(spec.op, dim)
        if isinstance(spec, OpSum):
            return sum(_complex(t.scale) * _named(t.op, dim) for t in spec.terms)
        A = np.array([[complex(re, im) for re, im in row] for row in spec])
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError("matrix literal must be square")
        return A
    except (ModelError, KeyError) as exc:
        raise ModelError(f"{path}: {exc}") from exc


def build_model(spec: ModelSpec) -> MeasurementModel:
    if spec.preset == "fig1":
        H = sigma_x() + 0.5 * sigma_y() + spec.omega * sigma_z()
        return MeasurementModel(H, (Channel(2 * sigma_minus(), eta=spec.eta),))
    if spec.preset == "deflate":
        a = destroy(spec.dim)
        return MeasurementModel(np.zeros((spec.dim, spec.dim), complex), (Channel(a @ a, eta=spec.eta),))
    H = build_matrix(spec.H, spec.dim, "model.H")
    chans = tuple(
        Channel(build_matrix(c.L, spec.dim, f"model.channels.{i}.L"), eta=c.eta, kind=c.kind, dark_rate=c.dark_rate)
        for i, c in enumerate(spec.channels)
    )
    un = tuple(build_matrix(u, spec.dim, f"model.unmonitored.{i}") for i, u in enumerate(spec.unmonitored))
    try:
        return MeasurementModel(H, chans, un)
    except ModelError as exc:
        raise ModelError(f"model: {exc}") from exc


def build_state(spec: StateSpec, dim: int) -> np.ndarray:
    if spec.matrix is not None:
        rho = build_matrix(spec.matrix, dim, "rho0.matrix")
    elif spec.preset == "excited":
        rho = excited_state()
    elif spec.preset == "ground":
        rho = ground_state()
    elif spec.preset == "fock":
        rho = fock_dm(dim, spec.n)
    elif spec.preset == "coherent":
        rho = coherent_dm(dim, _complex(spec.alpha))
    else:
        rho = np.eye(dim, dtype=complex) / dim
    if rho.shape != (dim, dim):
        raise ModelError(f"rho0: dimension {rho.shape[0]} does not match model dimension {dim}")
    return rho


def load_config(path_or_name) -> ExperimentConfig:
    """Read a JSON config file, or return a named preset."""
    if str(path_or_name) in PRESETS and not Path(str(path_or_name)).exists():
        return ExperimentConfig.model_validate(PRESETS[str(path_or_name)])
    with open(path_or_name) as fh:
        data = json.load(fh)
    return ExperimentConfig.model_validate(data)


def format_validation_error(exc) -> str:
    """One line per problem, each prefixed with its dotted field path."""
    lines = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Record files


def _header(dt: float, kinds: tuple[str, ...], n_bins: int, n_records: int, encoding: str,
            provenance: dict | None) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "encoding": encoding,
        "dt": float(dt),
        "channels": [{"kind": k} for k in kinds],
        "n_bins": int(n_bins),
        "n_records": int(n_records),
        "provenance": provenance or {},
    }


def write_records(path, records, provenance: dict | None = None, binary: bool = False) -> None:
    """Write one or more records sharing dt, channels and length."""
    if isinstance(records, DigitizedRecord):
        records = [records]
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    r0 = records[0]
    for j, r in enumerate(records):
        if r.dt != r0.dt or r.kinds != r0.kinds or r.n_bins != r0.n_bins:
            raise ValueError(f"record {j} differs in dt, channels or length from record 0")
    head = _header(r0.dt, r0.kinds, r0.n_bins, len(records), "binary" if binary else "jsonl", provenance)
    jump = [k == "jump" for k in r0.kinds]
    with open(path, "wb") as fh:
        fh.write((json.dumps(head, sort_keys=True) + "\n").encode())
        if binary:
            dtype = np.dtype([(f"c{c}", "<i8" if j else "<f8") for c, j in enumerate(jump)])
            for r in records:
                arr = np.empty(r.n_bins, dtype=dtype)
                for c, j in enumerate(jump):
                    arr[f"c{c}"] = r.values[:, c].astype(np.int64) if j else r.values[:, c]
                fh.write(arr.tobytes())
            return
        for i, r in enumerate(records):
            for k, row in enumerate(r.values):
                vals = [int(v) if j else float(v) for v, j in zip(row, jump)]
                fh.write((json.dumps({"r": i, "k": k, "I": vals}) + "\n").encode())


def write_record(path, record: DigitizedRecord, provenance: dict | None = None, binary: bool = False) -> None:
    write_records(path, [record], provenance, binary)


def read_header(fh) -> dict:
    line = fh.readline()
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"line 1: header is not valid JSON ({exc})") from exc
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise RecordFormatError("line 1: not a robinet record file")
    if head.get("version") != FORMAT_VERSION:
        raise RecordFormatError(f"unsupported format version {head.get('version')!r}, expected {FORMAT_VERSION}")
    for key in ("encoding", "dt", "channels", "n_bins", "n_records"):
        if key not in head:
            raise RecordFormatError(f"line 1: header lacks {key!r}")
    if head["encoding"] not in ("jsonl", "binary"):
        raise RecordFormatError(f"line 1: unknown encoding {head['encoding']!r}")
    if not (isinstance(head["dt"], (int, float)) and head["dt"] > 0):
        raise RecordFormatError("line 1: dt must be positive")
    if not all(isinstance(c, dict) and c.get("kind") in ("diffusive", "jump") for c in head["channels"]):
        raise RecordFormatError("line 1: channel kinds must be 'diffusive' or 'jump'")
    return head


def iter_rows(path, chunk: int = 65536) -> Iterator[tuple[int, int, np.ndarray]]:
    """Stream ``(record index, bin index, values)`` without loading the file."""
    with open(path, "rb") as fh:
        head = read_header(fh)
        kinds = [c["kind"] for c in head["channels"]]
        m, n, R = len(kinds), head["n_bins"], head["n_records"]
        if head["encoding"] == "binary":
            dtype = np.dtype([(f"c{c}", "<i8" if k == "jump" else "<f8") for c, k in enumerate(kinds)])
            total = n * R
            done = 0
            while done < total:
                want = min(chunk, total - done)
                buf = fh.read(want * dtype.itemsize)
                if len(buf) != want * dtype.itemsize:
                    raise RecordFormatError(f"binary body ends after {done + len(buf) // max(dtype.itemsize, 1)} of {total} rows")
                arr = np.frombuffer(buf, dtype=dtype)
                for j, row in enumerate(arr):
                    i = done + j
                    yield i // n, i % n, np.array([float(row[c]) for c in range(m)])
                done += want
            if fh.read(1):
                raise RecordFormatError("binary body has trailing bytes")
            return
        expected = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                r, k, vals = obj["r"], obj["k"], obj["I"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RecordFormatError(f"line {lineno}: malformed row ({exc})") from exc
            if (r, k) != divmod(expected, n) if n else True:
                raise RecordFormatError(f"line {lineno}: expected row r={expected // max(n, 1)}, k={expected % max(n, 1)}")
            if not isinstance(vals, list) or len(vals) != m:
                raise RecordFormatError(f"line {lineno}: expected {m} values")
            for v, kind in zip(vals, kinds):
                if kind == "jump" and not (isinstance(v, int) and v >= 0):
                    raise RecordFormatError(f"line {lineno}: jump counts must be non-negative integers")
                if not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise RecordFormatError(f"line {lineno}: non-finite value")
            expected += 1
            yield r, k, np.array(vals, dtype=float)
        if expected != n * R:
            raise RecordFormatError(f"file has {expected} rows, header declares {n * R}")


def read_records(path) -> tuple[list[DigitizedRecord], dict]:
    with open(path, "rb") as fh:
        head = read_header(fh)
    kinds = tuple(c["kind"] for c in head["channels"])
    n, R, m = head["n_bins"], head["n_records"], len(kinds)
    vals = np.empty((R, n, m))
    for r, k, v in iter_rows(path):
        vals[r, k] = v
    return [DigitizedRecord(head["dt"], vals[r], kinds) for r in range(R)], head


def read_record(path) -> tuple[DigitizedRecord, dict]:
    recs, head = read_records(path)
    if len(recs) != 1:
        raise RecordFormatError(f"file holds {len(recs)} records; use read_records")
    return recs[0], head


def state_json(rho: np.ndarray) -> list:
    """Row-major [re, im] pairs, the same layout as config matrix literals."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(rho)]
