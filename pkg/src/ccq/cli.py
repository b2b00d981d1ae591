"""Command line front end: ``ccq {gen,quantize,dequantize,inspect,verify,bench}``.

Exit codes: 0 success, 1 verification failure, 2 usage or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import container as ccq_container
from .coding import Family, family_encoding
from .errors import CcqError
from .kernels import BENCH_FIELDS, BENCH_M, BENCH_SHAPES, bench_gemv, dequantize_tensor
from .metrics import compression_summary, error_report
from .quantizer import DEFAULT_GROUP_SIZE, DEFAULT_ROUNDS, QuantizerOptions, quantize_tensor
from .tensorio import load_tensor, save_tensor
from .verify import verify_container

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_shape(text: str) -> tuple[int, int]:
    try:
        dims = tuple(int(d) for d in text.lower().replace("*", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 64x64") from None
    if len(dims) != 2 or min(dims) < 0:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 64x64")
    return dims


def parse_family(text: str) -> Family:
    try:
        return Family.parse(text)
    except CcqError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _emit(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_gen(args) -> int:
    d_o, d_i = args.shape
    if d_o * d_i == 0:
        raise UsageError("shape must have at least one element")
    rng = np.random.default_rng(args.seed)
    if args.dist == "gaussian":
        w = rng.standard_normal((d_o, d_i))
    elif args.dist == "uniform":
        w = rng.uniform(-1.0, 1.0, (d_o, d_i))
    else:
        # heavy tails give groups with outliers
        w = rng.standard_t(3, (d_o, d_i))
    save_tensor(args.out, (w * args.std).astype(np.float32))
    return EXIT_OK


def cmd_quantize(args) -> int:
    w = load_tensor(args.input)
    if w.ndim != 2:
        raise UsageError(f"expected a 2-D tensor, got shape {w.shape}")
    opts = QuantizerOptions(family=args.bpw, group_size=args.group_size,
                            refinement_rounds=args.rounds)
    qt = quantize_tensor(w, opts)
    c = ccq_container.write_container(qt, args.output, meta={"rounds": args.rounds})
    recon = dequantize_tensor(c)
    report = {
        "container": str(args.output),
        "family": qt.family.value,
        "error": error_report(w, recon, args.group_size).to_dict(),
        "compression": compression_summary(c, 4 * w.size),
    }
    _emit(report, args.report)
    return EXIT_OK


def cmd_dequantize(args) -> int:
    c = ccq_container.load_container(args.input)
    save_tensor(args.output, dequantize_tensor(c))
    return EXIT_OK


def cmd_inspect(args) -> int:
    c = ccq_container.load_container(args.input, check_crc=False)
    enc = family_encoding(c.family)
    parts = getattr(enc, "parts", (enc,))
    info = {
        "header": c.header,
        "triplets": [[p.L, p.N, p.S] for p in parts],
        "total_bits": [p.total_bits for p in parts],
        "sections": c.table,
        "measured_bpw": ccq_container.measured_bpw(c),
        "measured_bpw_exact": str(ccq_container.measured_bpw_exact(c)),
        "compression": compression_summary(c),
    }
    _emit(info, None)
    return EXIT_OK


def cmd_verify(args) -> int:
    c = ccq_container.load_container(args.input, check_crc=False)
    original = load_tensor(args.original) if args.original else None
    checks = verify_container(c, original)
    for chk in checks:
        status = "ok  " if chk.ok else "FAIL"
        print(f"{status} {chk.name}" + (f": {chk.detail}" if chk.detail else ""))
    return EXIT_OK if all(c.ok for c in checks) else EXIT_VERIFY


def cmd_bench(args) -> int:
    rows = bench_gemv(args.shapes, args.m, family=args.bpw,
                      group_size=args.group_size, repeats=args.repeats, seed=args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic float32 test matrix")
    g.add_argument("--shape", type=parse_shape, required=True)
    g.add_argument("--dist", choices=("gaussian", "uniform", "student-t"), default="gaussian")
    g.add_argument("--std", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("quantize", help="quantize a matrix into a .ccq container")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--bpw", type=parse_family, default=Family.BPW275,
                   help="code family: 2.75, 2.5 or 2.06")
    q.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    q.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)
    q.add_argument("--report", help="write the JSON report here instead of stdout")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="decode a container back to float32")
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=cmd_dequantize)

    i = sub.add_parser("inspect", help="print header, layout and bits per weight")
    i.add_argument("input")
    i.set_defaults(func=cmd_inspect)

    v = sub.add_parser("verify", help="check a container's integrity")
    v.add_argument("input")
    v.add_argument("--original", "--with-original", dest="original",
                   help="source matrix; adds quantizer/kernel agreement checks")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time GEMV variants, CSV output")
    b.add_argument("--shapes", type=lambda t: [parse_shape(s) for s in t.split(",")],
                   default=list(BENCH_SHAPES))
    b.add_argument("--m", type=_int_list, default=list(BENCH_M))
    b.add_argument("--bpw", type=parse_family, default=Family.BPW206)
    b.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, CcqError, OSError) as exc:
        print(f"ccq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
