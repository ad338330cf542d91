"""Client side of the external backend wire protocol.

A backend is a child process speaking newline-delimited JSON on stdio. It
announces itself with a handshake line::

    {"protocol": 1, "num_classes": u32, "max_inflight": u32, "deterministic": bool}

and then answers requests of the form::

    {"id": u64, "op": "demask"|"segment", "image": "<path.png>",
     "mask": "<path.pgm>"|null, "out": "<path>"}

with ``{"id": u64, "status": "ok"|"error", "message"?: str}``. Responses may
arrive in any order; they are matched by id. Image payloads travel as files
inside a job-scoped scratch directory owned by this client.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
import threading
from pathlib import Path

from . import imageio
from .backends import DemaskingBackend, SegmentationBackend
from .errors import (
    BackendDimensionError,
    BackendError,
    BackendTimeoutError,
    ProtocolError,
)
from .grid import ImageGrid, MaskedImage, SegMap

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 30.0


class _Pending:
    __slots__ = ("event", "response")

    def __init__(self):
        self.event = threading.Event()
        self.response = None


class ProtocolClient:
    """Owns the child process, the scratch directory, and id bookkeeping.

    Thread-safe: up to ``max_inflight`` requests (as advertised by the
    handshake) may be outstanding at once; a reader thread dispatches
    responses to their waiters by id.
    """

    def __init__(self, command, scratch_dir=None, timeout: float = 60.0):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.timeout = timeout
        self._tmp = None
        if scratch_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="patchcert-job-")
            scratch_dir = self._tmp.name
        self.scratch = Path(scratch_dir)
        self.scratch.mkdir(parents=True, exist_ok=True)

        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._next_id = 0
        self._fatal: Exception | None = None
        self._handshake_slot: dict = {}
        self._handshake_ready = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

        if not self._handshake_ready.wait(HANDSHAKE_TIMEOUT):
            self.close()
            raise BackendTimeoutError(
                f"no handshake from backend {self.command!r} within {HANDSHAKE_TIMEOUT}s"
            )
        if self._fatal is not None:
            raise self._fatal
        hs = self._handshake_slot
        if hs.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(f"unsupported protocol handshake: {hs}")
        self.num_classes = int(hs["num_classes"])
        self.max_inflight = max(1, int(hs.get("max_inflight", 1)))
        self.deterministic = bool(hs.get("deterministic", False))
        self._sem = threading.BoundedSemaphore(self.max_inflight)

    # ------------------------------------------------------------- plumbing

    def _read_loop(self):
        stream = self._proc.stdout
        first = True
        try:
            for line in stream:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    self._abort(ProtocolError(f"backend sent non-JSON line: {line[:200]!r}"))
                    return
                if first:
                    self._handshake_slot.update(msg)
                    self._handshake_ready.set()
                    first = False
                    continue
                rid = msg.get("id")
                with self._state_lock:
                    pending = self._pending.get(rid)
                if pending is None:
                    self._abort(ProtocolError(f"response for unknown request id {rid!r}"))
                    return
                pending.response = msg
                pending.event.set()
        except ValueError:
            pass  # stream closed during shutdown
        finally:
            self._abort(ProtocolError("backend closed its output stream"))
            if first:
                self._handshake_ready.set()

    def _abort(self, exc: Exception):
        with self._state_lock:
            if self._fatal is None:
                self._fatal = exc
            waiters = list(self._pending.values())
        for w in waiters:
            w.event.set()

    def allocate_id(self) -> int:
        with self._state_lock:
            rid = self._next_id
            self._next_id += 1
            return rid

    def request(self, rid: int, op: str, image_path, mask_path, out_path,
                timeout: float | None = None) -> None:
        """Send one request and wait for its response; raises on error."""
        payload = {
            "id": rid,
            "op": op,
            "image": str(image_path),
            "mask": str(mask_path) if mask_path is not None else None,
            "out": str(out_path),
        }
        pending = _Pending()
        with self._sem:
            with self._state_lock:
                if self._fatal is not None:
                    raise self._fatal
                self._pending[rid] = pending
            try:
                with self._write_lock:
                    self._proc.stdin.write(json.dumps(payload) + "\n")
                    self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                with self._state_lock:
                    self._pending.pop(rid, None)
                raise ProtocolError(f"request {rid}: backend pipe closed") from exc
            if not pending.event.wait(timeout or self.timeout):
                with self._state_lock:
                    self._pending.pop(rid, None)
                raise BackendTimeoutError(
                    f"request {rid} ({op}) timed out after {timeout or self.timeout}s"
                )
            with self._state_lock:
                self._pending.pop(rid, None)
                if pending.response is None:
                    raise self._fatal or ProtocolError(f"request {rid}: no response")
        resp = pending.response
        status = resp.get("status")
        if status == "ok":
            return
        if status == "error":
            raise BackendError(f"request {rid} ({op}): {resp.get('message', 'backend error')}")
        raise ProtocolError(f"request {rid}: malformed response {resp!r}")

    # ------------------------------------------------------------ transport

    def demask(self, masked: MaskedImage) -> ImageGrid:
        rid = self.allocate_id()
        in_path = self.scratch / f"req_{rid:08d}.in.png"
        mask_path = self.scratch / f"req_{rid:08d}.mask.pgm"
        out_path = self.scratch / f"req_{rid:08d}.out.png"
        # Re-zeroize so nothing under the mask ever reaches the backend.
        buf = masked.image.data * masked.mask.visible[:, :, None]
        imageio.write_png(in_path, ImageGrid._wrap(buf))
        imageio.write_mask(mask_path, masked.mask)
        self.request(rid, "demask", in_path, mask_path, out_path)
        result = imageio.read_png(out_path)
        self._cleanup(in_path, mask_path, out_path)
        if (result.height, result.width) != (masked.image.height, masked.image.width):
            raise BackendDimensionError(
                f"request {rid}: demask returned {result.height}x{result.width}, "
                f"expected {masked.image.height}x{masked.image.width}"
            )
        return result

    def segment(self, image: ImageGrid) -> SegMap:
        rid = self.allocate_id()
        in_path = self.scratch / f"req_{rid:08d}.in.png"
        ext = ".pgm" if self.num_classes <= 256 else ".seg"
        out_path = self.scratch / f"req_{rid:08d}.out{ext}"
        imageio.write_png(in_path, image)
        self.request(rid, "segment", in_path, None, out_path)
        result = imageio.read_segmap(out_path, self.num_classes)
        self._cleanup(in_path, out_path)
        if (result.height, result.width) != (image.height, image.width):
            raise BackendDimensionError(
                f"request {rid}: segment returned {result.height}x{result.width}, "
                f"expected {image.height}x{image.width}"
            )
        return result

    @staticmethod
    def _cleanup(*paths):
        for p in paths:
            try:
                Path(p).unlink()
            except OSError:
                pass

    def probe_determinism(self, masked: MaskedImage) -> bool:
        """Send the same demask request twice and compare bit-exactly."""
        return self.demask(masked).bit_equal(self.demask(masked))

    def close(self):
        proc = self._proc
        if proc.stdin:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ProcessDemasker(DemaskingBackend):
    def __init__(self, client: ProtocolClient):
        self.client = client
        self.deterministic = client.deterministic
        self.max_inflight = client.max_inflight
        self.name = f"process:{' '.join(client.command)}"

    def demask(self, masked: MaskedImage) -> ImageGrid:
        return self.client.demask(masked)


class ProcessSegmenter(SegmentationBackend):
    def __init__(self, client: ProtocolClient):
        self.client = client
        self.deterministic = client.deterministic
        self.max_inflight = client.max_inflight
        self.num_classes = client.num_classes
        self.name = f"process:{' '.join(client.command)}"

    def segment(self, image: ImageGrid) -> SegMap:
        return self.client.segment(image)


def external_process_backend(
    command, scratch_dir=None, timeout: float = 60.0
) -> tuple[ProcessDemasker, ProcessSegmenter]:
    """Spawn one backend process and expose it as a (demasker, segmenter)
    pair sharing the connection. Close via either wrapper's ``client``."""
    client = ProtocolClient(command, scratch_dir=scratch_dir, timeout=timeout)
    return ProcessDemasker(client), ProcessSegmenter(client)
