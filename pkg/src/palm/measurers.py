"""Per-operation measurement sets: labeled input and output digests.

Each measurer runs one toy operation and assembles the evidence a quote
will bind: an ordered list of labeled input measurements (H_I) and output
measurements (H_O). Dataset inputs are measured according to how the
dataset is held: a plain SHA3-256 over the file bytes when it was loaded
whole (label "h(role)"), or the sample-time multiset digest when it is
memory-mapped (label "MSH(role)"). A GPU attestation token, when one was
produced, rides in H_I under the label "GPU_att"; its absence from an
operation that declared GPU use is a verifier-visible condition, so
measurers never fabricate a placeholder.

Label schemas are closed per operation:

    Preprocessing          H_I [h_D(D)]                         H_O [h_D(Dpre)]
    AttributeDistribution  H_I [h_D(D)]                         H_O [h(Adist)]
    MeasurementBinding     H_I []                               H_O [h(h(D)||MSH(D))]
    Training               H_I [h(Mar), h_D(Dtr), h(T), h(Mtok)] H_O [h(Mtr)]
    WeightOptimization     H_I [h(M), h(Mtok), h(T), h(idopt),
                                h(Madp)?, h_D(Dopt)?]           H_O [h(Mopt)]
    Evaluation             H_I [h(M), h(Mtok), h_D(Dte)]        H_O [h(metric)]
    SingleInference        H_I [h(M), h(Mtok), h(q)]            H_O [h(r)]
    SessionInference       H_I [h(q), h(Mtok), h(M)]            H_O [h(r), h(H)]

(h_D resolves to h or MSH per mode; GPU_att, when present, is last in H_I.)
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Union

from .dataset import (
    DatasetHash,
    InMemoryDataset,
    MappedDataset,
    finish_epoch,
    pack_records,
)
from .encoding import lp, sha3_256, u32
from .errors import FormatError
from .msh import msh_of_records
from .toyops import (
    History,
    ToyModel,
    ToyTokenizer,
    TrainConfig,
    attribute_distribution,
    evaluate,
    infer,
    infer_session,
    optimize,
    preproc,
    serialize_distribution,
    serialize_history,
    train,
)

OP_CODES = {
    "Preprocessing": 1,
    "AttributeDistribution": 2,
    "MeasurementBinding": 3,
    "Training": 4,
    "WeightOptimization": 5,
    "Evaluation": 6,
    "SingleInference": 7,
    "SessionInference": 8,
}
_CODE_OPS = {v: k for k, v in OP_CODES.items()}

GPU_LABEL = "GPU_att"
BINDING_LABEL = "h(h(D)||MSH(D))"

Dataset = Union[InMemoryDataset, MappedDataset]


@dataclass(frozen=True)
class OperationId:
    """One of the eight measured operations; optimizations carry their id."""

    name: str
    id_opt: Optional[str] = None

    def __post_init__(self):
        if self.name not in OP_CODES:
            raise ValueError(f"unknown operation {self.name!r}")
        if (self.id_opt is not None) != (self.name == "WeightOptimization"):
            raise ValueError("id_opt is set iff the operation is WeightOptimization")

    @property
    def code(self) -> int:
        return OP_CODES[self.name]


@dataclass(frozen=True)
class LabeledMeasurement:
    label: str
    data: bytes

    def __post_init__(self):
        if not self.data:
            raise ValueError(f"empty measurement bytes for {self.label!r}")


@dataclass(frozen=True)
class MeasurementSet:
    op: OperationId
    h_i: tuple[LabeledMeasurement, ...]
    h_o: tuple[LabeledMeasurement, ...]

    def serialized_bytes(self) -> bytes:
        """Op code byte, then each list as u32 count + (label, bytes) entries."""
        out = bytearray([self.op.code])
        for group in (self.h_i, self.h_o):
            out += u32(len(group))
            for entry in group:
                out += lp(entry.label.encode("ascii"))
                out += lp(entry.data)
        return bytes(out)

    def digest(self) -> bytes:
        return sha3_256(self.serialized_bytes())

    def to_json(self) -> dict:
        doc = {
            "op": self.op.name,
            "h_i": [{"label": e.label, "hex": e.data.hex()} for e in self.h_i],
            "h_o": [{"label": e.label, "hex": e.data.hex()} for e in self.h_o],
        }
        if self.op.id_opt is not None:
            doc["id_opt"] = self.op.id_opt
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "MeasurementSet":
        try:
            op = OperationId(doc["op"], doc.get("id_opt"))
            h_i = tuple(
                LabeledMeasurement(e["label"], bytes.fromhex(e["hex"]))
                for e in doc["h_i"]
            )
            h_o = tuple(
                LabeledMeasurement(e["label"], bytes.fromhex(e["hex"]))
                for e in doc["h_o"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad measurement set: {exc}") from exc
        return cls(op, h_i, h_o)


@dataclass(frozen=True)
class GpuToken:
    """Simulated accelerator evidence: state digest, nonce, signature over both."""

    gpu_measurement: bytes
    nonce: bytes
    signature: bytes

    def __post_init__(self):
        if len(self.gpu_measurement) != 32 or len(self.nonce) != 32:
            raise ValueError("gpu_measurement and nonce must be 32 bytes")
        if len(self.signature) != 64:
            raise ValueError("signature must be 64 bytes")

    def encode(self) -> bytes:
        return self.gpu_measurement + self.nonce + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "GpuToken":
        if len(data) != 128:
            raise FormatError(f"GPU token must be 128 bytes, got {len(data)}")
        return cls(data[:32], data[32:64], data[64:])

    def signed_body(self) -> bytes:
        return self.gpu_measurement + self.nonce


@dataclass(frozen=True)
class Measured:
    """Result of a measured run: the operation output, its evidence, and the
    output payloads (keyed by label) a relying party can recheck H_O against."""

    result: object
    mset: MeasurementSet
    outputs: dict[str, bytes]


def _dataset_entry(role: str, dh: DatasetHash) -> LabeledMeasurement:
    if dh.kind == "plain":
        return LabeledMeasurement(f"h({role})", dh.plain)
    return LabeledMeasurement(f"MSH({role})", dh.multiset.encode())


def _ingest(ds: Dataset) -> tuple[tuple[bytes, ...], DatasetHash]:
    """Pull all records out of a dataset handle along with its measurement.

    In-memory handles were hashed whole at load. Mapped handles get one full
    exactly-once epoch here, measuring each record as it is sampled; the
    records are materialized so later passes (training epochs) stay inside
    already-measured memory.
    """
    if isinstance(ds, InMemoryDataset):
        return ds.records, ds.dataset_hash()
    records = tuple(ds.sample_record(i) for i in range(len(ds)))
    return records, finish_epoch(ds)


def _derived_entry(role: str, records: tuple[bytes, ...], mode: str) -> LabeledMeasurement:
    """Measure an operation-produced dataset the same way its input mode does."""
    if mode == "inmem":
        return LabeledMeasurement(f"h({role})", sha3_256(pack_records(records)))
    return LabeledMeasurement(f"MSH({role})", msh_of_records(records).encode())


def _with_gpu(h_i: list[LabeledMeasurement], gpu: Optional[GpuToken]) -> tuple:
    if gpu is not None:
        h_i = h_i + [LabeledMeasurement(GPU_LABEL, gpu.encode())]
    return tuple(h_i)


def measure_preprocessing(ds: Dataset, gpu: Optional[GpuToken] = None) -> Measured:
    records, dh = _ingest(ds)
    d_pre = preproc(records)
    out_entry = _derived_entry("Dpre", d_pre, ds.mode)
    mset = MeasurementSet(
        OperationId("Preprocessing"),
        _with_gpu([_dataset_entry("D", dh)], gpu),
        (out_entry,),
    )
    return Measured(d_pre, mset, {out_entry.label: pack_records(d_pre)})


def measure_attribute_distribution(
    ds: Dataset, gpu: Optional[GpuToken] = None
) -> Measured:
    records, dh = _ingest(ds)
    hist = attribute_distribution(records)
    ser = serialize_distribution(hist)
    mset = MeasurementSet(
        OperationId("AttributeDistribution"),
        _with_gpu([_dataset_entry("D", dh)], gpu),
        (LabeledMeasurement("h(Adist)", sha3_256(ser)),),
    )
    return Measured(hist, mset, {"h(Adist)": ser})


def measure_binding(path: str | os.PathLike) -> Measured:
    """Two passes over the same file: whole-file plain hash, then a full
    multiset epoch. The single output entry ties the two digests together."""
    with open(path, "rb") as f:
        plain = sha3_256(f.read())
    with MappedDataset(path) as ds:
        for i in range(len(ds)):
            ds.sample_record(i)
        msh = finish_epoch(ds).multiset.encode()
    mset = MeasurementSet(
        OperationId("MeasurementBinding"),
        (),
        (LabeledMeasurement(BINDING_LABEL, sha3_256(plain + msh)),),
    )
    return Measured((plain, msh), mset, {"h(D)": plain, "MSH(D)": msh})


def measure_training(
    arch: str,
    ds_tr: Dataset,
    config: TrainConfig,
    tokenizer: ToyTokenizer,
    gpu: Optional[GpuToken] = None,
) -> Measured:
    records, dh = _ingest(ds_tr)
    model = train(arch, records, config, tokenizer)
    mset = MeasurementSet(
        OperationId("Training"),
        _with_gpu(
            [
                LabeledMeasurement("h(Mar)", sha3_256(ToyModel.empty(arch).serialized_bytes())),
                _dataset_entry("Dtr", dh),
                LabeledMeasurement("h(T)", sha3_256(config.serialized_bytes())),
                LabeledMeasurement("h(Mtok)", sha3_256(tokenizer.serialized_bytes())),
            ],
            gpu,
        ),
        (LabeledMeasurement("h(Mtr)", sha3_256(model.serialized_bytes())),),
    )
    return Measured(model, mset, {"h(Mtr)": model.serialized_bytes()})


def measure_optimization(
    model: ToyModel,
    tokenizer: ToyTokenizer,
    config: TrainConfig,
    id_opt: str,
    adp: Optional[ToyModel] = None,
    ds_opt: Optional[Dataset] = None,
    gpu: Optional[GpuToken] = None,
) -> Measured:
    d_opt_records = None
    opt_dh = None
    if ds_opt is not None:
        d_opt_records, opt_dh = _ingest(ds_opt)
    optimized = optimize(model, tokenizer, config, id_opt, adp, d_opt_records)
    h_i = [
        LabeledMeasurement("h(M)", sha3_256(model.serialized_bytes())),
        LabeledMeasurement("h(Mtok)", sha3_256(tokenizer.serialized_bytes())),
        LabeledMeasurement("h(T)", sha3_256(config.serialized_bytes())),
        LabeledMeasurement("h(idopt)", sha3_256(id_opt.encode("ascii"))),
    ]
    if adp is not None:
        h_i.append(LabeledMeasurement("h(Madp)", sha3_256(adp.serialized_bytes())))
    if opt_dh is not None:
        h_i.append(_dataset_entry("Dopt", opt_dh))
    mset = MeasurementSet(
        OperationId("WeightOptimization", id_opt),
        _with_gpu(h_i, gpu),
        (LabeledMeasurement("h(Mopt)", sha3_256(optimized.serialized_bytes())),),
    )
    return Measured(optimized, mset, {"h(Mopt)": optimized.serialized_bytes()})


def measure_evaluation(
    model: ToyModel,
    tokenizer: ToyTokenizer,
    ds_te: Dataset,
    gpu: Optional[GpuToken] = None,
) -> Measured:
    records, dh = _ingest(ds_te)
    metric = evaluate(model, tokenizer, records)
    metric_bytes = metric.encode("ascii")
    mset = MeasurementSet(
        OperationId("Evaluation"),
        _with_gpu(
            [
                LabeledMeasurement("h(M)", sha3_256(model.serialized_bytes())),
                LabeledMeasurement("h(Mtok)", sha3_256(tokenizer.serialized_bytes())),
                _dataset_entry("Dte", dh),
            ],
            gpu,
        ),
        (LabeledMeasurement("h(metric)", sha3_256(metric_bytes)),),
    )
    return Measured(metric, mset, {"h(metric)": metric_bytes})


def measure_inference(
    model: ToyModel,
    tokenizer: ToyTokenizer,
    query: bytes,
    gpu: Optional[GpuToken] = None,
) -> Measured:
    response = infer(model, tokenizer, query)
    r_bytes = response.encode("latin-1")
    mset = MeasurementSet(
        OperationId("SingleInference"),
        _with_gpu(
            [
                LabeledMeasurement("h(M)", sha3_256(model.serialized_bytes())),
                LabeledMeasurement("h(Mtok)", sha3_256(tokenizer.serialized_bytes())),
                LabeledMeasurement("h(q)", sha3_256(query)),
            ],
            gpu,
        ),
        (LabeledMeasurement("h(r)", sha3_256(r_bytes)),),
    )
    return Measured(response, mset, {"h(r)": r_bytes})


def measure_session_inference(
    model: ToyModel,
    tokenizer: ToyTokenizer,
    history: History,
    query: bytes,
    gpu: Optional[GpuToken] = None,
) -> Measured:
    response = infer_session(model, tokenizer, history, query)
    r_bytes = response.encode("latin-1")
    new_history = history + ((query, r_bytes),)
    history_bytes = serialize_history(new_history)
    mset = MeasurementSet(
        OperationId("SessionInference"),
        _with_gpu(
            [
                LabeledMeasurement("h(q)", sha3_256(query)),
                LabeledMeasurement("h(Mtok)", sha3_256(tokenizer.serialized_bytes())),
                LabeledMeasurement("h(M)", sha3_256(model.serialized_bytes())),
            ],
            gpu,
        ),
        (
            LabeledMeasurement("h(r)", sha3_256(r_bytes)),
            LabeledMeasurement("h(H)", sha3_256(history_bytes)),
        ),
    )
    return Measured(
        (response, new_history), mset, {"h(r)": r_bytes, "h(H)": history_bytes}
    )
