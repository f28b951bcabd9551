"""Reference external-generator server speaking the subprocess protocol.

Wraps a planted generator behind stdin/stdout so the adapter, CLI, and tests
can exercise the wire format end to end. A trained model can replace this by
implementing the same five messages.

Protocol, one request at a time:
  request  ::= "CMD id\\n" [TNS1 payload]
  response ::= "OK id\\n" TNS1 payload | "ERR id message\\n"
  INFO -> [dim_z, dim_w, rows, cols]; MAP(z) -> w; SYN(w) -> spectrogram;
  AVG -> w_avg; WGT -> first synthesis-layer weight matrix.

Run: python -m texturelens.extgen [--small] [--seed N]
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .genmodel import (
    LatentVector,
    LinearPlantedGenerator,
    W,
    Z,
    build_default_config,
    small_planted_config,
)
from .tensorio import tensor_to_bytes


def _read_exact(stream, n):
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError
        buf += chunk
    return buf


def _read_tensor(stream) -> np.ndarray:
    head = _read_exact(stream, 8)
    if head[:4] != b"TNS1":
        raise ValueError("bad tensor magic")
    rank = int.from_bytes(head[4:8], "little")
    dims_raw = _read_exact(stream, 4 * rank)
    dims = [int.from_bytes(dims_raw[i * 4:(i + 1) * 4], "little") for i in range(rank)]
    count = 1
    for d in dims:
        count *= d
    body = _read_exact(stream, 4 * count)
    flat = np.frombuffer(body, dtype="<f4")
    return flat.reshape(dims).astype(np.float64)


def serve(gen: LinearPlantedGenerator, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        line = stdin.readline()
        if not line:
            return
        parts = line.decode().strip().split()
        if not parts:
            continue
        cmd, rid = parts[0], (parts[1] if len(parts) > 1 else "0")
        try:
            if cmd == "INFO":
                rows, cols = gen.spec_shape
                out = np.array([gen.dim_z, gen.dim_w, rows, cols], dtype=float)
            elif cmd == "MAP":
                z = _read_tensor(stdin)
                out = gen.map_latent(LatentVector(z, Z)).values
            elif cmd == "SYN":
                w = _read_tensor(stdin)
                out = gen.synthesize(LatentVector(w, W)).values
            elif cmd == "AVG":
                out = gen.w_avg.values
            elif cmd == "WGT":
                out = gen.basis_matrix
            else:
                stdout.write(f"ERR {rid} unknown command {cmd}\n".encode())
                stdout.flush()
                continue
        except EOFError:
            return
        except Exception as exc:  # report, keep serving
            stdout.write(f"ERR {rid} {exc}\n".encode())
            stdout.flush()
            continue
        stdout.write(f"OK {rid}\n".encode())
        stdout.write(tensor_to_bytes(out))
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--small", action="store_true",
                        help="serve a small random generator instead of the default one")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dim", type=int, default=6, help="latent dim for --small")
    args = parser.parse_args(argv)
    if args.small:
        config = small_planted_config(dim_z=args.dim, dim_w=args.dim, seed=args.seed)
    else:
        config = build_default_config(seed=args.seed)
    serve(LinearPlantedGenerator(config))
    return 0


if __name__ == "__main__":
    sys.exit(main())
