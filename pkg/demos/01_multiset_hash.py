#!/usr/bin/env python3
"""A walk through the incremental multiset hash.

The digest treats a dataset as an unordered bag of records: insertion
order cannot matter, partial hashes computed by independent workers must
combine into the whole, and any skipped, repeated, or altered record has
to change the result.
"""

import random

from palm import MshAccumulator

records = [f"record {i}: some payload".encode() for i in range(1000)]

# Hash the records in their natural order.
acc = MshAccumulator()
acc.insert_many(records)
digest = acc.finalize()
print(f"dataset of {digest.count} records")
print(f"digest (first limbs): {digest.limbs[:4]}")

# A shuffled pass lands on the same digest: the hash sees a multiset,
# not a sequence.
shuffled = records[:]
random.shuffle(shuffled)
acc2 = MshAccumulator()
acc2.insert_many(shuffled)
print(f"shuffled pass identical: {acc2.finalize() == digest}")

# Four workers each hash a slice; merging their accumulators equals the
# sequential digest. This is what lets a data-parallel loader measure a
# dataset without any coordination beyond a final merge.
workers = [MshAccumulator() for _ in range(4)]
for i, record in enumerate(records):
    workers[i % 4].insert(record)
merged = workers[0]
for worker in workers[1:]:
    merged = merged.merge(worker)
print(f"4-way parallel merge identical: {merged.finalize() == digest}")

# Sensitivity: drop one record, or flip one byte, and the digest moves.
skipped = MshAccumulator()
skipped.insert_many(records[1:])
print(f"skipping one record detected: {skipped.finalize() != digest}")

tampered = MshAccumulator()
tampered.insert_many([records[0][:-1] + b"!"] + records[1:])
print(f"one flipped byte detected: {tampered.finalize() != digest}")

# The canonical encoding is what gets measured and signed downstream.
print(f"encoded digest: {len(digest.encode())} bytes, hex prefix {digest.hex()[:32]}...")
