#!/usr/bin/env python3
# Copyright 2026 The edt Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Recomputes Recall@N from descriptor files and compares it with a recall CSV.

Standard library only. Ranking follows the toolkit's rule: descending inner product, ties broken
by ascending id, a query's own id excluded from the candidates.
"""

import argparse
import csv
import struct
import sys
from pathlib import Path


def load_descriptors(path):
    data = Path(path).read_bytes()
    if data[:4] != b"EDTD":
        raise ValueError(f"{path}: bad magic")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * count * dim
    if len(data) != expected:
        raise ValueError(f"{path}: {len(data)} bytes, expected {expected}")
    flat = struct.unpack_from(f"<{count * dim}f", data, 16)
    rows = [flat[i * dim:(i + 1) * dim] for i in range(count)]
    with open(str(path) + ".csv", newline="") as f:
        reader = csv.DictReader(f)
        side = [(int(r["id"]), int(r["place_id"])) for r in reader]
    if len(side) != count:
        raise ValueError(f"{path}: sidecar has {len(side)} rows for {count} descriptors")
    return side, rows


def load_ground_truth(path):
    gt = {}
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            gt.setdefault(int(r["query_id"]), set()).add(int(r["db_id"]))
    return gt


def recall(queries, db, gt, ns):
    (q_side, q_rows), (d_side, d_rows) = queries, db
    first = []
    for (qid, _), q in zip(q_side, q_rows):
        scored = []
        for (did, _), d in zip(d_side, d_rows):
            if did == qid:
                continue
            # Summation order differs from the toolkit's kernels, so near-ties may rank differently.
            scored.append((-sum(a * b for a, b in zip(q, d)), did))
        scored.sort()
        pos = gt.get(qid, set())
        if not pos:
            raise ValueError(f"query {qid} has no positives")
        rank = next((i + 1 for i, (_, did) in enumerate(scored) if did in pos), None)
        first.append(rank)
    return {n: 100.0 * sum(1 for r in first if r is not None and r <= n) / len(first) for n in ns}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--query", required=True)
    ap.add_argument("--db", required=True)
    ap.add_argument("--gt", required=True)
    ap.add_argument("--recall-csv", required=True, help="N,recall rows written by the evaluate command")
    ap.add_argument("--tol", type=float, default=1e-9)
    args = ap.parse_args()

    with open(args.recall_csv, newline="") as f:
        reported = {int(r["N"]): float(r["recall"]) for r in csv.DictReader(f)}
    ours = recall(load_descriptors(args.query), load_descriptors(args.db), load_ground_truth(args.gt), sorted(reported))
    bad = 0
    for n in sorted(reported):
        ok = abs(ours[n] - reported[n]) <= args.tol
        bad += not ok
        print(f"R@{n} reported {reported[n]:.4f} recomputed {ours[n]:.4f} {'ok' if ok else 'MISMATCH'}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
