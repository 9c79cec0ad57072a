"""Versioned text-header + binary-payload container used for models and cascades.

Layout::

    <MAGIC>
    version <int>
    <key> <value...>        # one per line, in any order
    end_header
    <raw little-endian arrays, in the order the reader requests them>
"""

import os
import tempfile

import numpy as np

from .errors import ModelFormatError

END = "end_header"


def _read_umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


# read once at import: os.umask is process-wide and writers run on worker threads
_UMASK = _read_umask()


def write_atomic(path, data, mode="wb"):
    """Write ``data`` to ``path`` via a temp file in the same directory plus rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        # mkstemp creates 0600; give the result the permissions open() would
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump(path, magic, version, header_lines, arrays):
    """Serialize a container.

    ``header_lines`` is a list of already formatted ``key value`` strings,
    ``arrays`` a list of numpy arrays written as little-endian raw bytes.
    """
    head = [magic, f"version {version}", *header_lines, END]
    chunks = ["\n".join(head).encode("utf-8") + b"\n"]
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    write_atomic(path, b"".join(chunks))


class Reader:
    """Sequential reader over a container's header and payload."""

    def __init__(self, path, magic, version):
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise ModelFormatError("file", str(exc)) from exc
        marker = ("\n" + END + "\n").encode()
        cut = blob.find(marker)
        if cut < 0:
            raise ModelFormatError("header", "truncated or missing end_header")
        try:
            text = blob[:cut].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError("header", "not valid utf-8") from exc
        lines = text.split("\n")
        if lines[0] != magic:
            raise ModelFormatError("magic", f"expected {magic!r}, found {lines[0][:40]!r}")
        if len(lines) < 2 or not lines[1].startswith("version "):
            raise ModelFormatError("version", "missing version line")
        try:
            found = int(lines[1].split()[1])
        except (IndexError, ValueError) as exc:
            raise ModelFormatError("version", "unparseable version") from exc
        if found != version:
            raise ModelFormatError("version", f"unsupported version {found}, expected {version}")
        self.lines = lines[2:]
        self.payload = blob[cut + len(marker):]
        self.offset = 0

    def int_field(self, key, minimum=0):
        for line in self.lines:
            parts = line.split()
            if parts and parts[0] == key:
                try:
                    value = int(parts[1])
                except (IndexError, ValueError) as exc:
                    raise ModelFormatError(key, "not an integer") from exc
                if value < minimum:
                    raise ModelFormatError(key, f"must be >= {minimum}, got {value}")
                return value
        raise ModelFormatError(key, "missing header field")

    def float_field(self, key):
        for line in self.lines:
            parts = line.split()
            if parts and parts[0] == key:
                try:
                    value = float(parts[1])
                except (IndexError, ValueError) as exc:
                    raise ModelFormatError(key, "not a number") from exc
                if not np.isfinite(value):
                    raise ModelFormatError(key, "non-finite value")
                return value
        raise ModelFormatError(key, "missing header field")

    def records(self, key):
        """All ``key a b ...`` lines, returned as lists of the remaining tokens."""
        return [line.split()[1:] for line in self.lines if line.split()[:1] == [key]]

    def array(self, name, dtype, shape, finite=True):
        dtype = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        if self.offset + nbytes > len(self.payload):
            raise ModelFormatError(name, "truncated payload")
        arr = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += nbytes
        arr = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
        if finite and arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise ModelFormatError(name, "non-finite values")
        return arr

    def finish(self):
        if self.offset != len(self.payload):
            raise ModelFormatError("payload", f"{len(self.payload) - self.offset} trailing bytes")
