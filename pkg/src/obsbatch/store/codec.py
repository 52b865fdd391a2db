from __future__ import annotations

import zlib


class CodecError(ValueError):
    pass


def encode(codec: str, payload: bytes) -> bytes:
    if codec == "none":
        return payload
    if codec == "deflate":
        # raw RFC 1951 stream, no zlib/gzip wrapper
        comp = zlib.compressobj(level=6, wbits=-15)
        return comp.compress(payload) + comp.flush()
    raise CodecError(f"unknown codec {codec!r}")


def decode(codec: str, payload: bytes) -> bytes:
    if codec == "none":
        return payload
    if codec == "deflate":
        dec = zlib.decompressobj(wbits=-15)
        try:
            out = dec.decompress(payload) + dec.flush()
        except zlib.error as exc:
            raise CodecError(f"deflate stream is corrupt: {exc}") from exc
        if not dec.eof or dec.unused_data:
            raise CodecError("deflate stream is truncated or has trailing bytes")
        return out
    raise CodecError(f"unknown codec {codec!r}")
