"""palm: measured ML-pipeline operations with verifiable attestation quotes.

The package simulates a trusted domain that executes small, deterministic
pipeline operations (dataset transforms, toy training and optimization,
evaluation, inference), measures their inputs and outputs (plain hashes
for data loaded whole, an incremental multiset hash for data sampled from
a memory mapping), and signs the evidence into quotes that a
non-interactive verifier checks against a trusted authority's reference
store.
"""

from .attestation import Challenge
from .dataset import (
    InMemoryDataset,
    MappedDataset,
    finish_epoch,
    load_in_memory,
    pack_records,
    unpack_records,
    write_dataset,
)
from .errors import DuplicateAccess, IncompleteEpoch, PalmError
from .measurers import GpuToken, LabeledMeasurement, MeasurementSet, OperationId
from .msh import (
    DEFAULT_PARAMS,
    MshAccumulator,
    MshDigest,
    MshParams,
    hash_record,
    msh_of_records,
)
from .protocol import (
    AttestationRequest,
    AttestationResponse,
    TdContext,
    Verdict,
    Verifier,
    build_request,
    prover_handle,
)
from .refstore import ReferenceStore
from .toyops import ToyModel, ToyTokenizer, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Challenge",
    "InMemoryDataset",
    "MappedDataset",
    "finish_epoch",
    "load_in_memory",
    "pack_records",
    "unpack_records",
    "write_dataset",
    "DuplicateAccess",
    "IncompleteEpoch",
    "PalmError",
    "GpuToken",
    "LabeledMeasurement",
    "MeasurementSet",
    "OperationId",
    "DEFAULT_PARAMS",
    "MshAccumulator",
    "MshDigest",
    "MshParams",
    "hash_record",
    "msh_of_records",
    "AttestationRequest",
    "AttestationResponse",
    "TdContext",
    "Verdict",
    "Verifier",
    "build_request",
    "prover_handle",
    "ReferenceStore",
    "ToyModel",
    "ToyTokenizer",
    "TrainConfig",
    "__version__",
]
