"""Line-delimited JSON client for external model and codec processes.

The child writes one JSON handshake line on startup, then answers one JSON
response line per request line. Requests carry a monotonically increasing id
that the response must echo. Requests are serialized per child process, so a
single client is safe to share between threads.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import subprocess
import threading
import time

from .errors import ProcessExited, ProtocolError, Timeout

_READ_SIZE = 1 << 16


class LineProcessClient:
    def __init__(self, command, *, timeout: float = 30.0):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = float(timeout)
        self._lock = threading.Lock()
        self._buffer = bytearray()
        self._next_id = 0
        self._proc = subprocess.Popen(
            args,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )
        try:
            line = self._read_line(time.monotonic() + self._timeout)
            self.handshake = self._parse(line, context="handshake")
        except Exception:
            self.close()
            raise

    def request(self, payload: dict) -> dict:
        """Send one request and return its matching response object."""
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            message = dict(payload)
            message["id"] = rid
            data = (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")
            try:
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise ProcessExited(f"process closed stdin while sending request {rid}") from e
            line = self._read_line(time.monotonic() + self._timeout, rid=rid)
            resp = self._parse(line, context=f"response to request id {rid}")
            if resp.get("id") != rid:
                raise ProtocolError(
                    f"response id {resp.get('id')!r} does not match request id {rid}"
                )
            return resp

    def _parse(self, line: bytes, *, context: str) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed {context}: {line[:200]!r}") from e
        if not isinstance(obj, dict):
            raise ProtocolError(f"malformed {context}: expected an object, got {obj!r}")
        return obj

    def _read_line(self, deadline: float, rid: int | None = None) -> bytes:
        what = "handshake" if rid is None else f"response to request id {rid}"
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self._buffer[:newline])
                del self._buffer[: newline + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout(f"no {what} within {self._timeout}s")
            fd = self._proc.stdout.fileno()
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise Timeout(f"no {what} within {self._timeout}s")
            chunk = os.read(fd, _READ_SIZE)
            if not chunk:
                code = self._proc.poll()
                raise ProcessExited(f"process exited (code {code}) before sending {what}")
            self._buffer.extend(chunk)

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=2.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
