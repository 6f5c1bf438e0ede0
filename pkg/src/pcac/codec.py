"""End-to-end multiscale encode/decode, the bitstream container, checkpoints.

Coding order (and therefore chunk order) follows the decode dependency chain:
the top latent is coded with a fixed uniform model, every other latent with
the mixture predicted by the decoder one scale below, and finally the RGB
features with the channel-autoregressive mixture. Geometry never enters the
bitstream; it is a decode-side input.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import likelihood as lh
from . import range_coder as rc
from .errors import (ChecksumFailure, CorruptStream, DigestMismatch,
                     EmptyGeometry, ModelMismatch, ShapeMismatch)
from .quantizer import QuantizerConfig, dequantize, quantize_hard, quantize_soft
from .sparse_nn import KernelMapCache, ModelConfig, ScaleDecoder, ScaleEncoder
from .tensor_core import build_pyramid

MAGIC = b"MNET"
FILE_MAGIC = b"MNEF"
VERSION = 1


class CodecModel:
    """The full stack: one encoder and one decoder per scale, plus quantizer."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.quantizer = QuantizerConfig(num_bins=self.config.num_bins)
        self.encoders = [ScaleEncoder(n, self.config, rng)
                         for n in range(1, self.config.num_scales + 1)]
        self.decoders = [ScaleDecoder(n, self.config, rng)
                         for n in range(1, self.config.num_scales + 1)]
        self.latent_grid = lh.SymbolGrid(self.config.num_bins)
        self._digest_cache = None

    def named_parameters(self):
        out = []
        for enc in self.encoders:
            out += enc.named_parameters()
        for dec in self.decoders:
            out += dec.named_parameters()
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def mark_dirty(self):
        """Invalidate the cached digest after in-place weight updates."""
        self._digest_cache = None

    def digest(self) -> bytes:
        """8-byte content digest over config + all weights, order-canonical."""
        if self._digest_cache is not None:
            return self._digest_cache
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        h.update(json.dumps(self.quantizer.to_dict(), sort_keys=True).encode())
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.value, dtype=np.float64).tobytes())
        self._digest_cache = h.digest()[:8]
        return self._digest_cache


@dataclass
class ModelCheckpoint:
    model: CodecModel
    metadata: dict = field(default_factory=dict)

    def save(self, path):
        arrays = {name: p.value for name, p in self.model.named_parameters()}
        meta = dict(self.metadata)
        meta["config"] = self.model.config.to_dict()
        meta["quantizer"] = self.model.quantizer.to_dict()
        meta["digest"] = self.model.digest().hex()
        np.savez_compressed(path, __meta__=json.dumps(meta, sort_keys=True),
                            **arrays)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            model = CodecModel(ModelConfig.from_dict(meta.pop("config")))
            model.quantizer = QuantizerConfig.from_dict(meta.pop("quantizer"))
            for name, p in model.named_parameters():
                p.value[...] = data[name]
            model.mark_dirty()
        stored = meta.pop("digest", None)
        if stored is not None and stored != model.digest().hex():
            raise DigestMismatch("checkpoint digest does not match its weights")
        return cls(model, meta)


# -------------------------------------------------------------- forward pass

def _normalize_rgb(rgb):
    return np.asarray(rgb, dtype=np.float64) / 127.5 - 1.0


def run_encoders(model: CodecModel, rgb, maps: KernelMapCache):
    """Bottom-up pass; returns the latent preactivation node per scale."""
    x = ad.constant(_normalize_rgb(rgb))
    latents = []
    for enc in model.encoders:
        latent_pre, x = enc(x, maps)
        latents.append(latent_pre)
    return latents


def run_decoders_coding(model: CodecModel, latent_values, maps: KernelMapCache):
    """Top-down pass on dequantized latent arrays.

    latent_values[n-1] is the (N_n, C) float array for scale n. Yields
    (scale, raw parameter array) from the top scale down; the scale-n entry
    parameterizes the content of level n-1 (latents, or RGB for n=1).
    """
    forwarded = None
    for n in range(model.config.num_scales, 0, -1):
        dec = model.decoders[n - 1]
        params, forwarded = dec(ad.constant(latent_values[n - 1]),
                                forwarded, maps)
        yield n, params.value


# ---------------------------------------------------------------- container

def _chunk(payload: bytes) -> bytes:
    return struct.pack("<II", len(payload), zlib.crc32(payload)) + payload


def _read_chunks(buf: bytes, offset: int, max_chunks: int):
    chunks = []
    while offset < len(buf) and len(chunks) < max_chunks:
        if offset + 8 > len(buf):
            raise CorruptStream("truncated chunk header")
        length, crc = struct.unpack_from("<II", buf, offset)
        offset += 8
        if offset + length > len(buf):
            raise CorruptStream("truncated chunk payload")
        payload = buf[offset:offset + length]
        offset += length
        if zlib.crc32(payload) != crc:
            raise ChecksumFailure("chunk checksum mismatch")
        chunks.append(payload)
    return chunks


def _header(model: CodecModel, level_counts) -> bytes:
    n_levels = len(level_counts)
    return (MAGIC + struct.pack("<BB", VERSION, n_levels - 1)
            + struct.pack(f"<{n_levels}I", *level_counts)
            + model.digest()
            + struct.pack("<HH", 256, model.config.num_bins))


def _parse_header(buf: bytes):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise CorruptStream("bad magic")
    version, num_scales = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise CorruptStream(f"unsupported version {version}")
    off = 6
    counts = struct.unpack_from(f"<{num_scales + 1}I", buf, off)
    off += 4 * (num_scales + 1)
    digest = buf[off:off + 8]
    off += 8
    f_alpha, latent_alpha = struct.unpack_from("<HH", buf, off)
    off += 4
    return dict(num_scales=num_scales, counts=counts, digest=digest,
                f_alphabet=f_alpha, latent_alphabet=latent_alpha), off


def header_size(num_scales: int) -> int:
    return 6 + 4 * (num_scales + 1) + 8 + 4


# ------------------------------------------------------------------- coding

_CDF_CHUNK_ROWS = 2048  # pmf construction block size (memory bound for M=256)


def _latent_cdf_rows(params, cfg: ModelConfig, grid):
    """(N*C, M+1) integer CDFs in coding order (point-major, channel-minor)."""
    pmfs = lh.latent_pmfs(params, cfg.latent_channels, cfg.mixtures, grid)
    n, c, m = pmfs.shape
    return lh.build_cdf_table(pmfs.reshape(n * c, m))


def _code_latent_chunk(symbols, cdfs) -> bytes:
    enc = rc.RangeEncoder()
    for s, cdf in zip(symbols.reshape(-1), cdfs):
        enc.encode_symbol(int(s), cdf)
    return enc.finish()


def _decode_latent_chunk(payload, cdfs, n, c):
    dec = rc.RangeDecoder(payload)
    out = np.array([dec.decode_symbol(cdf) for cdf in cdfs], dtype=np.int64)
    return out.reshape(n, c)


def _rgb_channel_cdfs(unpacked, channel, x_r=None, x_g=None,
                      hasher=None):
    n = len(unpacked["w_r"])
    out = np.empty((n, 257), dtype=np.int64)
    for lo in range(0, n, _CDF_CHUNK_ROWS):
        hi = min(lo + _CDF_CHUNK_ROWS, n)
        sub = {k: v[lo:hi] for k, v in unpacked.items()}
        pmf = lh.rgb_channel_pmf(
            sub, channel, lh.RGB_GRID,
            x_r=None if x_r is None else x_r[lo:hi],
            x_g=None if x_g is None else x_g[lo:hi])
        out[lo:hi] = lh.build_cdf_table(pmf)
    if hasher is not None:
        hasher.update(out.tobytes())
    return out


def _encode_rgb(params, r, g, b, cfg: ModelConfig, hasher=None) -> bytes:
    u = lh.unpack_rgb_params(params, cfg.mixtures)
    x_r = lh.RGB_GRID.centers[r]
    x_g = lh.RGB_GRID.centers[g]
    enc = rc.RangeEncoder()
    for channel, syms, kw in (("r", r, {}),
                              ("g", g, dict(x_r=x_r)),
                              ("b", b, dict(x_r=x_r, x_g=x_g))):
        cdfs = _rgb_channel_cdfs(u, channel, hasher=hasher, **kw)
        for s, cdf in zip(syms, cdfs):
            enc.encode_symbol(int(s), cdf)
    return enc.finish()


def _decode_rgb(payload, params, cfg: ModelConfig, hasher=None):
    u = lh.unpack_rgb_params(params, cfg.mixtures)
    dec = rc.RangeDecoder(payload)

    def pass_channel(channel, **kw):
        cdfs = _rgb_channel_cdfs(u, channel, hasher=hasher, **kw)
        return np.array([dec.decode_symbol(cdf) for cdf in cdfs],
                        dtype=np.int64)

    r = pass_channel("r")
    g = pass_channel("g", x_r=lh.RGB_GRID.centers[r])
    b = pass_channel("b", x_r=lh.RGB_GRID.centers[r],
                     x_g=lh.RGB_GRID.centers[g])
    return r, g, b


# ------------------------------------------------------------ encode/decode

@dataclass
class CodingDebug:
    cdf_sha256: str
    chunk_sizes: list


def encode(geometry, rgb_features, model: CodecModel,
           debug: bool = False):
    """Compress integer RGB features over known geometry into a bitstream."""
    geometry = np.asarray(geometry, dtype=np.int64).reshape(-1, 3)
    if len(geometry) == 0:
        raise EmptyGeometry("nothing to encode")
    rgb = np.asarray(rgb_features, dtype=np.int64)
    if rgb.shape != (len(geometry), 3):
        raise ShapeMismatch(f"features {rgb.shape} for {len(geometry)} points")
    cfg = model.config
    pyramid = build_pyramid(geometry, cfg.num_scales)
    maps = KernelMapCache(pyramid)
    # geometry arrives in canonical order inside the pyramid; features must
    # follow the same permutation
    from .tensor_core import sort_coords
    perm = sort_coords(geometry)
    rgb = rgb[perm]

    latent_pre = run_encoders(model, rgb, maps)
    symbols, values = [], []
    for node in latent_pre:
        s, v = quantize_hard(node.value, model.quantizer)
        symbols.append(s)
        values.append(v)

    hasher = hashlib.sha256() if debug else None
    chunks = []
    # top scale: fixed uniform model
    top = symbols[-1]
    chunks.append(rc.encode_uniform(top.reshape(-1), cfg.num_bins))
    for n, params in run_decoders_coding(model, values, maps):
        if n > 1:
            cdfs = _latent_cdf_rows(params, cfg, model.latent_grid)
            if hasher is not None:
                hasher.update(cdfs.tobytes())
            chunks.append(_code_latent_chunk(symbols[n - 2], cdfs))
        else:
            chunks.append(_encode_rgb(params, rgb[:, 0], rgb[:, 1],
                                      rgb[:, 2], cfg, hasher=hasher))
    counts = [len(c) for c in pyramid.coords]
    stream = _header(model, counts) + b"".join(_chunk(c) for c in chunks)
    if debug:
        return stream, CodingDebug(hasher.hexdigest(), [len(c) for c in chunks])
    return stream


def _prepare_decode(geometry, bitstream, model: CodecModel, max_chunks):
    header, off = _parse_header(bitstream)
    if header["digest"] != model.digest():
        raise DigestMismatch("bitstream was produced by a different model")
    cfg = model.config
    if header["num_scales"] != cfg.num_scales or \
            header["latent_alphabet"] != cfg.num_bins:
        raise ModelMismatch("container layout disagrees with the model config")
    pyramid = build_pyramid(np.asarray(geometry, dtype=np.int64).reshape(-1, 3),
                            cfg.num_scales)
    if tuple(header["counts"]) != tuple(len(c) for c in pyramid.coords):
        raise ModelMismatch("geometry does not match the encoded point counts")
    chunks = _read_chunks(bitstream, off, max_chunks)
    return pyramid, chunks


def decode(geometry, bitstream, model: CodecModel, debug: bool = False):
    """Exact inverse of encode; returns (N, 3) integer RGB in canonical order."""
    cfg = model.config
    pyramid, chunks = _prepare_decode(geometry, bitstream, model,
                                      cfg.num_scales + 1)
    if len(chunks) != cfg.num_scales + 1:
        raise CorruptStream(
            f"expected {cfg.num_scales + 1} chunks, found {len(chunks)}")
    maps = KernelMapCache(pyramid)
    hasher = hashlib.sha256() if debug else None

    n_top = len(pyramid.coords[cfg.num_scales])
    top = rc.decode_uniform(chunks[0], n_top * cfg.latent_channels,
                            cfg.num_bins).reshape(n_top, cfg.latent_channels)
    latent_symbols = [None] * cfg.num_scales
    latent_symbols[-1] = top
    values = [None] * cfg.num_scales
    values[-1] = dequantize(top, model.quantizer)

    forwarded = None
    rgb = None
    for n in range(cfg.num_scales, 0, -1):
        dec_net = model.decoders[n - 1]
        params, forwarded = dec_net(ad.constant(values[n - 1]), forwarded, maps)
        chunk = chunks[cfg.num_scales + 1 - n]
        if n > 1:
            cdfs = _latent_cdf_rows(params.value, cfg, model.latent_grid)
            if hasher is not None:
                hasher.update(cdfs.tobytes())
            n_lvl = len(pyramid.coords[n - 1])
            latent_symbols[n - 2] = _decode_latent_chunk(
                chunk, cdfs, n_lvl, cfg.latent_channels)
            values[n - 2] = dequantize(latent_symbols[n - 2], model.quantizer)
        else:
            r, g, b = _decode_rgb(chunk, params.value, cfg, hasher=hasher)
            rgb = np.stack([r, g, b], axis=1)
    if debug:
        return rgb, CodingDebug(hasher.hexdigest(), [len(c) for c in chunks])
    return rgb


def decode_scalable(geometry, bitstream, model: CodecModel,
                    mode: str = "mean", seed: int = 0):
    """Decode a (possibly truncated) stream; missing chunks are estimated.

    Latent chunks that are absent are reconstructed from their predicted
    distributions (mode "mean": pmf expectation snapped to the symbol grid;
    mode "sample": seeded draw). An absent F chunk yields a lossy color
    estimate from p(F | z^1), channel-sequentially.
    """
    if mode not in ("mean", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = model.config
    pyramid, chunks = _prepare_decode(geometry, bitstream, model,
                                      cfg.num_scales + 1)
    if not chunks:
        raise CorruptStream("no decodable chunks")
    maps = KernelMapCache(pyramid)
    rng = np.random.default_rng(seed)

    n_top = len(pyramid.coords[cfg.num_scales])
    top = rc.decode_uniform(chunks[0], n_top * cfg.latent_channels,
                            cfg.num_bins).reshape(n_top, cfg.latent_channels)
    values = [None] * cfg.num_scales
    values[-1] = dequantize(top, model.quantizer)

    def estimate_symbols(pmfs):
        flat = pmfs.reshape(-1, pmfs.shape[-1])
        if mode == "mean":
            exp = flat @ np.arange(flat.shape[-1], dtype=np.float64)
            sym = np.clip(np.floor(exp + 0.5), 0, flat.shape[-1] - 1)
            return sym.astype(np.int64).reshape(pmfs.shape[:-1])
        cum = np.cumsum(flat, axis=-1)
        u = rng.random((len(flat), 1)) * cum[:, -1:]
        sym = (u > cum[:, :-1]).sum(axis=-1)
        return sym.astype(np.int64).reshape(pmfs.shape[:-1])

    forwarded = None
    rgb = None
    for n in range(cfg.num_scales, 0, -1):
        dec_net = model.decoders[n - 1]
        params, forwarded = dec_net(ad.constant(values[n - 1]), forwarded, maps)
        chunk_i = cfg.num_scales + 1 - n
        have = chunk_i < len(chunks)
        if n > 1:
            n_lvl = len(pyramid.coords[n - 1])
            if have:
                cdfs = _latent_cdf_rows(params.value, cfg, model.latent_grid)
                sym = _decode_latent_chunk(chunks[chunk_i], cdfs, n_lvl,
                                           cfg.latent_channels)
            else:
                pmfs = lh.latent_pmfs(params.value, cfg.latent_channels,
                                      cfg.mixtures, model.latent_grid)
                sym = estimate_symbols(pmfs)
            values[n - 2] = dequantize(sym, model.quantizer)
        else:
            if have:
                r, g, b = _decode_rgb(chunks[chunk_i], params.value, cfg)
            else:
                u = lh.unpack_rgb_params(params.value, cfg.mixtures)
                r = estimate_symbols(lh.rgb_channel_pmf(u, "r", lh.RGB_GRID))
                x_r = lh.RGB_GRID.centers[r]
                g = estimate_symbols(
                    lh.rgb_channel_pmf(u, "g", lh.RGB_GRID, x_r=x_r))
                x_g = lh.RGB_GRID.centers[g]
                b = estimate_symbols(
                    lh.rgb_channel_pmf(u, "b", lh.RGB_GRID, x_r=x_r, x_g=x_g))
            rgb = np.stack([r, g, b], axis=1)
    return rgb


def truncate_bitstream(bitstream: bytes, num_chunks: int) -> bytes:
    """Prefix of the stream ending exactly after `num_chunks` chunks."""
    header, off = _parse_header(bitstream)
    end = off
    for _ in range(num_chunks):
        length, = struct.unpack_from("<I", bitstream, end)
        end += 8 + length
    return bitstream[:end]


def chunk_lengths(bitstream: bytes):
    header, off = _parse_header(bitstream)
    out = []
    while off < len(bitstream):
        length, = struct.unpack_from("<I", bitstream, off)
        out.append(length)
        off += 8 + length
    return out


def measure_bpp(bitstream: bytes, num_points: int) -> float:
    assert num_points > 0
    return 8.0 * len(bitstream) / num_points


# -------------------------------------------------------------- loss graphs

def block_loss(model: CodecModel, geometry, rgb_features,
               quant_mode: str = "ste", maps: KernelMapCache | None = None):
    """Differentiable total coding cost (bits) of one block.

    Returns (loss node, constant top-scale bits). The constant term is the
    uniform cost of the top latent; it carries no gradient.
    """
    cfg = model.config
    rgb = np.asarray(rgb_features, dtype=np.int64)
    if maps is None:
        pyramid = build_pyramid(np.asarray(geometry, dtype=np.int64)
                                .reshape(-1, 3), cfg.num_scales)
        maps = KernelMapCache(pyramid)
        from .tensor_core import sort_coords
        rgb = rgb[sort_coords(np.asarray(geometry).reshape(-1, 3))]
    latent_pre = run_encoders(model, rgb, maps)
    symbols = [quantize_hard(n.value, model.quantizer)[0] for n in latent_pre]
    quantized = [quantize_soft(n, model.quantizer, mode=quant_mode)
                 for n in latent_pre]

    terms = []
    forwarded = None
    for n in range(cfg.num_scales, 0, -1):
        params, forwarded = model.decoders[n - 1](quantized[n - 1],
                                                  forwarded, maps)
        if n > 1:
            terms.append(lh.latent_bits_node(
                params, symbols[n - 2], cfg.latent_channels, cfg.mixtures,
                model.latent_grid))
        else:
            terms.append(lh.rgb_bits_node(params, rgb[:, 0], rgb[:, 1],
                                          rgb[:, 2], cfg.mixtures))
    const_bits = lh.uniform_bits(len(maps.pyramid.coords[cfg.num_scales]),
                                 cfg.latent_channels, cfg.num_bins)
    return ad.sum_nodes(terms), const_bits


def quantized_info_bits(model: CodecModel, geometry, rgb_features) -> float:
    """Information content of a block under the integer tables the coder uses.

    Sum over all coded symbols of -log2(freq/2^16) (uniform widths for the
    top scale); the coded payload can never be shorter than this.
    """
    geometry = np.asarray(geometry, dtype=np.int64).reshape(-1, 3)
    cfg = model.config
    pyramid = build_pyramid(geometry, cfg.num_scales)
    maps = KernelMapCache(pyramid)
    from .tensor_core import sort_coords
    rgb = np.asarray(rgb_features, dtype=np.int64)[sort_coords(geometry)]

    latent_pre = run_encoders(model, rgb, maps)
    symbols, values = [], []
    for node in latent_pre:
        s, v = quantize_hard(node.value, model.quantizer)
        symbols.append(s)
        values.append(v)

    # the uniform coder gives every symbol width 1 out of cfg.num_bins
    total = symbols[-1].size * float(np.log2(cfg.num_bins))

    for n, params in run_decoders_coding(model, values, maps):
        if n > 1:
            cdfs = _latent_cdf_rows(params, cfg, model.latent_grid)
            freq = np.diff(cdfs, axis=-1)
            rows = np.arange(len(cdfs))
            total += -np.log2(
                freq[rows, symbols[n - 2].reshape(-1)] / rc.TOTAL).sum()
        else:
            u = lh.unpack_rgb_params(params, cfg.mixtures)
            r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
            x_r = lh.RGB_GRID.centers[r]
            x_g = lh.RGB_GRID.centers[g]
            for channel, syms, kw in (("r", r, {}),
                                      ("g", g, dict(x_r=x_r)),
                                      ("b", b, dict(x_r=x_r, x_g=x_g))):
                cdfs = _rgb_channel_cdfs(u, channel, **kw)
                freq = np.diff(cdfs, axis=-1)
                rows = np.arange(len(cdfs))
                total += -np.log2(freq[rows, syms] / rc.TOTAL).sum()
    return float(total)


def estimate_bits(model: CodecModel, geometry, rgb_features) -> float:
    """Eq.-style cross-entropy estimate of the coded size, in bits."""
    loss, const = block_loss(model, geometry, rgb_features)
    return float(loss.value) + const


# --------------------------------------------------------- multi-block files

def encode_blocks(blocks, model: CodecModel) -> bytes:
    """Concatenate per-block streams: [origin, length, stream] per block."""
    parts = [FILE_MAGIC, struct.pack("<BI", VERSION, len(blocks))]
    for origin, geometry, rgb in blocks:
        stream = encode(geometry, rgb, model)
        parts.append(struct.pack("<iiiI", *[int(v) for v in origin],
                                 len(stream)))
        parts.append(stream)
    return b"".join(parts)


def decode_blocks(data: bytes, blocks_geometry, model: CodecModel):
    """Inverse of encode_blocks given the per-block geometry list."""
    if data[:4] != FILE_MAGIC:
        raise CorruptStream("bad file magic")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise CorruptStream(f"unsupported file version {version}")
    if count != len(blocks_geometry):
        raise ModelMismatch("block count mismatch")
    off = 9
    out = []
    for geometry in blocks_geometry:
        ox, oy, oz, length = struct.unpack_from("<iiiI", data, off)
        off += 16
        stream = data[off:off + length]
        off += length
        out.append(((ox, oy, oz), decode(geometry, stream, model)))
    return out
