#!/usr/bin/env python3
"""From an operation to a signed quote, one layer at a time.

A measured operation yields a measurement set: labeled digests of every
input and output. The trust domain binds that set to a verifier-supplied
challenge inside a 64-byte report-data value, MACs it into a report, and
a quoting key turns the report into an externally checkable signature.
"""

import tempfile

from palm import Challenge, ToyTokenizer, TrainConfig, write_dataset
from palm.attestation import (
    H_MODULE,
    build_report_data,
    create_td_report,
    derive_mac_key,
    derive_private_key,
    measure_td_image,
    qe_sign_quote,
    verify_quote,
)
from palm.dataset import load_in_memory
from palm.measurers import measure_training

records = [b"the cat sat on the mat", b"the dog sat on the rug", b"the cat ran"]
tokenizer = ToyTokenizer.build(records)
config = TrainConfig(seed=7, epochs=2, sampling="shuffled")

with tempfile.NamedTemporaryFile(suffix=".palmds") as f:
    write_dataset(f.name, records)
    measured = measure_training("bigram", load_in_memory(f.name), config, tokenizer, gpu=None)

print("measurement set for one training run:")
for entry in measured.mset.h_i:
    print(f"  input   {entry.label:10s} {entry.data.hex()[:24]}...")
for entry in measured.mset.h_o:
    print(f"  output  {entry.label:10s} {entry.data.hex()[:24]}...")

# The challenge is the verifier's freshness contribution; report data
# binds its digest to the measurement set digest.
chal = Challenge.from_nonce(b"\x42" * 32)
rd = build_report_data(chal, measured.mset)
print(f"\nreport data: sha3(challenge) || sha3(measurement set) = {rd.raw64.hex()[:32]}...")

# Platform provisioning: image measurement, MAC key, quoting key.
seed = b"demo-platform-seed"
h_td = measure_td_image(b"demo-td-image-manifest")
mac_key = derive_mac_key(seed)
qe_key = derive_private_key(b"qe:" + seed)
key_id = "qe-" + qe_key.public_key().public_bytes_raw().hex()[:8]

report = create_td_report(h_td, H_MODULE, rd, mac_key)
print(f"report MAC (trust-domain internal): {report.mac.hex()[:32]}...")

quote = qe_sign_quote(report, mac_key, qe_key, key_id)
print(f"quote: {len(quote.encode())} bytes, signed by {quote.qe_key_id}")

# Anyone holding the public key can check the quote; nothing secret is
# needed on the verifying side.
verify_quote(quote.encode(), qe_key.public_key())
print("signature verifies against the published key")

# Flipping a single evidence byte kills it.
forged = bytearray(quote.encode())
forged[40] ^= 0x01
try:
    verify_quote(bytes(forged), qe_key.public_key())
except Exception as exc:
    print(f"tampered quote refused: {type(exc).__name__}")
