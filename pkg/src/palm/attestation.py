"""Software-simulated trusted-hardware evidence chain.

The chain mirrors the TDX shape without any hardware: a trust-domain
image is measured into h_TD; a 64-byte REPORTDATA value binds a challenge
and a measurement set; the (simulated) CPU emits a MAC-ed report over
(h_TD, h_module, REPORTDATA); and a quoting key signs the report body
after checking the MAC, yielding an externally verifiable quote. A
separate key stands in for an attesting accelerator.

The MAC key and signing keys live only in this module's structures; the
unforgeability claim tested elsewhere is that nothing outside them can
mint a verifying quote. Ed25519 is deterministic, so fixed keys and
inputs give byte-stable quotes for golden tests.
"""

from __future__ import annotations

import hashlib
import hmac
import time
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.exceptions import InvalidSignature

from .encoding import Reader, lp, sha3_256, u64
from .errors import EmptyImage, FormatError, MacInvalid, MalformedQuote, SignatureInvalid
from .measurers import GpuToken, MeasurementSet

QUOTE_VERSION = 0x01

# Stands in for the TDX-module build the platform runs; bumping the string
# models a module update that must invalidate stale references.
H_MODULE = sha3_256(b"palm-td-module/1")

CHAL_NONCE = 0x01
CHAL_TIMESTAMP = 0x02


def measure_td_image(image_bytes: bytes) -> bytes:
    """Launch-time measurement of the trust-domain image manifest."""
    if not image_bytes:
        raise EmptyImage("refusing to measure an empty image manifest")
    return sha3_256(image_bytes)


@dataclass(frozen=True)
class Challenge:
    """Freshness input: a single-use 32-byte nonce or a unix timestamp."""

    kind: str  # "nonce" | "timestamp"
    nonce: bytes = b""
    timestamp: int = 0

    @classmethod
    def from_nonce(cls, nonce: bytes) -> "Challenge":
        if len(nonce) != 32:
            raise FormatError(f"nonce must be 32 bytes, got {len(nonce)}")
        return cls("nonce", nonce=nonce)

    @classmethod
    def from_timestamp(cls, seconds: int | None = None) -> "Challenge":
        return cls("timestamp", timestamp=int(time.time()) if seconds is None else int(seconds))

    def encode(self) -> bytes:
        if self.kind == "nonce":
            return bytes([CHAL_NONCE]) + self.nonce
        return bytes([CHAL_TIMESTAMP]) + u64(self.timestamp)

    @classmethod
    def decode(cls, data: bytes) -> "Challenge":
        r = Reader(data)
        tag = r.take(1)[0]
        if tag == CHAL_NONCE:
            chal = cls.from_nonce(r.take(32))
        elif tag == CHAL_TIMESTAMP:
            chal = cls.from_timestamp(r.u64())
        else:
            raise FormatError(f"unknown challenge tag {tag:#x}")
        r.expect_end()
        return chal

    def digest(self) -> bytes:
        return sha3_256(self.encode())


@dataclass(frozen=True)
class ReportData:
    """64-byte binding value: challenge digest then measurement-set digest."""

    raw64: bytes

    def __post_init__(self):
        if len(self.raw64) != 64:
            raise FormatError(f"report data must be 64 bytes, got {len(self.raw64)}")

    @property
    def chal_digest(self) -> bytes:
        return self.raw64[:32]

    @property
    def hi_ho_digest(self) -> bytes:
        return self.raw64[32:]


def build_report_data(chal: Challenge, mset: MeasurementSet) -> ReportData:
    return ReportData(chal.digest() + mset.digest())


@dataclass(frozen=True)
class TdReport:
    """MAC-ed report over the trust-domain state; never leaves the platform
    unauthenticated."""

    h_td: bytes
    h_module: bytes
    report_data: ReportData
    mac: bytes

    def body(self) -> bytes:
        return self.h_td + self.h_module + self.report_data.raw64


def create_td_report(
    h_td: bytes, h_module: bytes, rd: ReportData, mac_key: bytes
) -> TdReport:
    body = h_td + h_module + rd.raw64
    mac = hmac.new(mac_key, body, hashlib.sha3_256).digest()
    return TdReport(h_td, h_module, rd, mac)


@dataclass(frozen=True)
class Quote:
    """Signed evidence: versioned body plus a 64-byte signature."""

    h_td: bytes
    h_module: bytes
    report_data: ReportData
    qe_key_id: str
    signature: bytes

    def signed_body(self) -> bytes:
        return (
            bytes([QUOTE_VERSION])
            + self.h_td
            + self.h_module
            + self.report_data.raw64
            + lp(self.qe_key_id.encode("ascii"))
        )

    def encode(self) -> bytes:
        return self.signed_body() + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "Quote":
        try:
            r = Reader(data)
            version = r.take(1)[0]
            if version != QUOTE_VERSION:
                raise FormatError(f"unknown quote version {version:#x}")
            h_td = r.take(32)
            h_module = r.take(32)
            rd = ReportData(r.take(64))
            key_id = r.lp().decode("ascii")
            signature = r.take(64)
            r.expect_end()
        except (FormatError, UnicodeDecodeError) as exc:
            raise MalformedQuote(str(exc)) from exc
        return cls(h_td, h_module, rd, key_id, signature)


def qe_sign_quote(
    report: TdReport, mac_key: bytes, qe_signing_key: Ed25519PrivateKey, qe_key_id: str
) -> Quote:
    """The quoting step: admit only MAC-valid reports, then sign the body.

    The MAC gate is what makes the untrusted hop between report creation
    and quoting tamper-evident; a report altered in transit dies here.
    """
    expected = hmac.new(mac_key, report.body(), hashlib.sha3_256).digest()
    if not hmac.compare_digest(expected, report.mac):
        raise MacInvalid("report MAC does not verify; refusing to sign")
    quote = Quote(report.h_td, report.h_module, report.report_data, qe_key_id, b"\x00" * 64)
    signature = qe_signing_key.sign(quote.signed_body())
    return Quote(report.h_td, report.h_module, report.report_data, qe_key_id, signature)


def verify_quote(quote_bytes: bytes, qe_pubkey: Ed25519PublicKey) -> Quote:
    """Check the signature and hand back the parsed fields for pipeline checks."""
    quote = Quote.decode(quote_bytes)
    try:
        qe_pubkey.verify(quote.signature, quote.signed_body())
    except InvalidSignature as exc:
        raise SignatureInvalid("quote signature does not verify") from exc
    return quote


def gpu_attest(
    gpu_state_bytes: bytes, nonce: bytes, gpu_key: Ed25519PrivateKey
) -> GpuToken:
    """Simulated accelerator attestation: sign (state digest, nonce)."""
    measurement = sha3_256(gpu_state_bytes)
    signature = gpu_key.sign(measurement + nonce)
    return GpuToken(measurement, nonce, signature)


def verify_gpu_token(token: GpuToken, gpu_pubkey: Ed25519PublicKey) -> bool:
    try:
        gpu_pubkey.verify(token.signature, token.signed_body())
    except InvalidSignature:
        return False
    return True


def derive_private_key(seed_material: bytes) -> Ed25519PrivateKey:
    """Deterministic key from seed material, for reproducible fixtures."""
    return Ed25519PrivateKey.from_private_bytes(sha3_256(seed_material))


def derive_mac_key(seed_material: bytes) -> bytes:
    return sha3_256(b"mac:" + seed_material)
