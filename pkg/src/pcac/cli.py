"""Command-line front end: train / encode / decode / decode-scalable /
evaluate / self-check.

Exit codes: 0 success, 1 usage error, 2 data or model error. Outputs are
written to a temp file and renamed, so failures never leave partial files.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import codec, pc_io, trainer
from .errors import PcacError
from .tensor_core import sort_coords

CHECKPOINT_DIR_ENV = "PCAC_CHECKPOINT_DIR"


def _checkpoint_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and CHECKPOINT_DIR_ENV in os.environ:
        candidate = Path(os.environ[CHECKPOINT_DIR_ENV]) / arg
        if candidate.exists():
            return candidate
    return p


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."),
                               prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_blocks(ply_path):
    pc = pc_io.read_ply(ply_path)
    depth = max(1, int(np.ceil(np.log2(
        max(2.0, float(np.asarray(pc.positions).max()) + 1)))))
    tensor = pc_io.voxelize(pc, depth)
    return pc_io.partition_blocks(tensor)


def _cmd_train(args):
    blocks = []
    for path in sorted(Path(args.data_dir).glob("*.ply")):
        blocks.extend(_load_blocks(path))
    cfg = trainer.TrainConfig(seed=args.seed, max_epochs=args.max_epochs,
                              batch_size=args.batch_size)
    log = print if args.verbose else None
    ckpt = trainer.train(blocks, cfg, log=log)
    ckpt.save(args.out)
    print(f"saved checkpoint to {args.out} "
          f"(best epoch {ckpt.metadata['epoch']}, "
          f"{ckpt.metadata['val_bits_per_point']:.2f} bits/point)")
    return 0


def _cmd_encode(args):
    model = codec.ModelCheckpoint.load(_checkpoint_path(args.model)).model
    blocks = _load_blocks(args.input)
    t0 = time.monotonic()
    data = codec.encode_blocks(
        [(b.origin, b.tensor.coords, b.tensor.features.astype(np.int64))
         for b in blocks], model)
    elapsed = time.monotonic() - t0
    _atomic_write(args.out, data)
    n = sum(len(b.tensor) for b in blocks)
    print(f"bpp: {codec.measure_bpp(data, n):.2f}")
    print(f"seconds: {elapsed:.2f}")
    return 0


def _geometry_blocks(geometry_ply):
    blocks = _load_blocks(geometry_ply)
    return blocks


def _write_decoded(blocks, decoded, out_path):
    positions = np.concatenate(
        [np.asarray(origin) + b.tensor.coords
         for b, (origin, _) in zip(blocks, decoded)])
    colors = np.concatenate([rgb for _, rgb in decoded])
    pc = pc_io.PointCloud(positions, colors)
    fd, tmp = tempfile.mkstemp(dir=Path(out_path).parent or Path("."))
    os.close(fd)
    pc_io.write_ply(pc, tmp)
    os.replace(tmp, out_path)


def _cmd_decode(args):
    model = codec.ModelCheckpoint.load(_checkpoint_path(args.model)).model
    blocks = _geometry_blocks(args.geometry)
    with open(args.bitstream, "rb") as f:
        data = f.read()
    decoded = codec.decode_blocks(data, [b.tensor.coords for b in blocks],
                                  model)
    lossless = all(
        np.array_equal(rgb, b.tensor.features.astype(np.int64))
        for b, (_, rgb) in zip(blocks, decoded))
    _write_decoded(blocks, decoded, args.out)
    print(f"lossless: {str(lossless).lower()}")
    return 0


def _cmd_decode_scalable(args):
    model = codec.ModelCheckpoint.load(_checkpoint_path(args.model)).model
    blocks = _geometry_blocks(args.geometry)
    with open(args.bitstream, "rb") as f:
        data = f.read()
    if data[:4] != codec.FILE_MAGIC:
        raise PcacError("expected a multi-block bitstream file")
    import struct
    _, count = struct.unpack_from("<BI", data, 4)
    off = 9
    decoded = []
    for b in blocks[:count]:
        ox, oy, oz, length = struct.unpack_from("<iiiI", data, off)
        off += 16
        stream = data[off:off + length]
        off += length
        truncated = codec.truncate_bitstream(stream, args.chunks)
        rgb = codec.decode_scalable(b.tensor.coords, truncated, model,
                                    mode=args.mode, seed=args.seed)
        decoded.append(((ox, oy, oz), rgb))
    _write_decoded(blocks[:count], decoded, args.out)
    print(f"chunks used: {args.chunks}")
    return 0


def _cmd_evaluate(args):
    model = codec.ModelCheckpoint.load(_checkpoint_path(args.model)).model
    paths = sorted(Path(args.data_dir).glob("*.ply"))
    rows = trainer.evaluate(paths, model)
    with open(args.csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "points", "bpp", "enc_seconds"])
        for r in rows:
            w.writerow([r["name"], r["points"], f"{r['bpp']:.2f}",
                        f"{r['enc_seconds']:.2f}"])
    for r in rows:
        print(f"{r['name']}: {r['points']} points, {r['bpp']:.2f} bpp, "
              f"{r['enc_seconds']:.2f} s")
    return 0


def _cmd_self_check(args):
    """Fast invariant sweep: round trips, coder optimality, pmf normalization."""
    from . import likelihood as lh
    from . import range_coder as rc
    rng = np.random.default_rng(args.seed)
    model = codec.CodecModel(seed=args.seed)

    checks = []
    # range coder round trip
    for _ in range(20):
        m = int(rng.integers(2, 300))
        pmf = rng.dirichlet(np.ones(m))
        cdf = lh.build_cdf_table(pmf)[0]
        syms = rng.integers(0, m, size=int(rng.integers(1, 500)))
        data = rc.encode_with_cdfs(syms, np.asarray(cdf))
        back = rc.decode_with_cdfs(data, np.asarray(cdf), len(syms))
        checks.append(("range coder round trip", np.array_equal(syms, back)))
    # pmf normalization
    pmf = lh.dlm_pmf(rng.normal(size=(50, 10)), rng.normal(size=(50, 10)),
                     rng.normal(size=(50, 10)), lh.RGB_GRID)
    checks.append(("dlm pmf normalization",
                   bool(np.all(np.abs(pmf.sum(-1) - 1) < 1e-9))))
    # codec round trip on a small random block
    coords = np.unique(rng.integers(0, 16, size=(200, 3)), axis=0)
    rgb = rng.integers(0, 256, size=(len(coords), 3))
    stream = codec.encode(coords, rgb, model)
    back = codec.decode(coords, stream, model)
    checks.append(("codec round trip",
                   np.array_equal(back, rgb[sort_coords(coords)])))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"{'ok' if ok else 'FAIL'}: {name}")
    return 0 if not failed else 2


def build_parser():
    p = argparse.ArgumentParser(
        prog="pcac",
        description="Multiscale lossless point-cloud attribute codec")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a directory of PLYs")
    t.add_argument("data_dir")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("encode", help="compress a PLY's attributes")
    e.add_argument("input")
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_encode)

    d = sub.add_parser("decode", help="reconstruct attributes losslessly")
    d.add_argument("geometry")
    d.add_argument("bitstream")
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_decode)

    s = sub.add_parser("decode-scalable",
                       help="lossy decode from a stream prefix")
    s.add_argument("geometry")
    s.add_argument("bitstream")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["mean", "sample"], default="mean")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--chunks", type=int, default=3, choices=[1, 2, 3, 4])
    s.set_defaults(func=_cmd_decode_scalable)

    v = sub.add_parser("evaluate", help="rate/time report over a directory")
    v.add_argument("data_dir")
    v.add_argument("--model", required=True)
    v.add_argument("--csv", required=True)
    v.set_defaults(func=_cmd_evaluate)

    c = sub.add_parser("self-check", help="run fast built-in invariant checks")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_self_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except PcacError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
