"""Subprocess bridge to external codecs speaking the file protocol."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from cfseg.codec import protocol
from cfseg.codec.synthetic import CodecContract
from cfseg.core import ContractError
from cfseg.formats import FormatError

DEFAULT_TIMEOUT = 300.0


class BridgeError(RuntimeError):
    """External codec failed: nonzero exit, timeout, or malformed response."""

    def __init__(self, message: str, exit_code: int | None = None, stderr: str = ""):
        super().__init__(message)
        self.exit_code = exit_code
        self.stderr = stderr


def run_codec_command(cmd_template: str, op: str, request_dir: str | Path,
                      timeout: float = DEFAULT_TIMEOUT) -> None:
    """Spawn the external command on a prepared request dir and wait.

    ``cmd_template`` may reference ``{op}`` and ``{request_dir}``; if it
    names neither, they are appended as positional arguments.
    """
    if op not in protocol.OPS:
        raise ContractError(f"unknown codec op {op!r}")
    request_dir = str(request_dir)
    if "{op}" in cmd_template or "{request_dir}" in cmd_template:
        cmd = cmd_template.format(op=op, request_dir=request_dir)
        argv = shlex.split(cmd)
    else:
        argv = shlex.split(cmd_template) + [op, request_dir]
    try:
        proc = subprocess.run(
            argv, capture_output=True, text=True, timeout=timeout, check=False
        )
    except subprocess.TimeoutExpired as exc:
        raise BridgeError(
            f"codec command timed out after {timeout:.0f}s: {argv}",
            stderr=(exc.stderr or b"").decode() if isinstance(exc.stderr, bytes) else (exc.stderr or ""),
        ) from exc
    except OSError as exc:
        raise BridgeError(f"failed to spawn codec command {argv}: {exc}") from exc
    if proc.returncode != 0:
        raise BridgeError(
            f"codec command exited {proc.returncode}: {argv}",
            exit_code=proc.returncode,
            stderr=proc.stderr,
        )


class SubprocessCodec:
    """Codec interface backed by an external process, one call per request.

    Calls are serialized per instance; each call gets a fresh request
    directory under `work_dir` (or a temporary one).
    """

    def __init__(self, cmd_template: str, contract: CodecContract,
                 timeout: float = DEFAULT_TIMEOUT, work_dir: str | Path | None = None):
        self.cmd_template = cmd_template
        self.contract = contract
        self.timeout = timeout
        self.work_dir = Path(work_dir) if work_dir else None
        self._counter = 0

    def _request_dir(self) -> Path:
        if self.work_dir is None:
            return Path(tempfile.mkdtemp(prefix="cfseg-codec-"))
        self._counter += 1
        d = self.work_dir / f"req{self._counter:05d}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def decode_batch(self, ids: list[str], cs_rows, is_rows) -> dict[str, np.ndarray]:
        cs_rows = np.atleast_2d(np.asarray(cs_rows, dtype=np.float64))
        is_rows = np.atleast_2d(np.asarray(is_rows, dtype=np.float64))
        if cs_rows.shape[1] != self.contract.cs_dim:
            raise ContractError(f"decode request cs dim {cs_rows.shape[1]} != contract")
        if is_rows.shape[1] != self.contract.is_dim:
            raise ContractError(f"decode request is dim {is_rows.shape[1]} != contract")
        rd = self._request_dir()
        protocol.write_decode_request(rd, ids, cs_rows, is_rows)
        run_codec_command(self.cmd_template, "decode", rd, self.timeout)
        try:
            images = protocol.read_decode_response(rd, ids)
        except FormatError as exc:
            raise BridgeError(f"malformed decode response: {exc}") from exc
        for rid, img in images.items():
            if img.shape != tuple(self.contract.image_shape):
                raise BridgeError(
                    f"decode response {rid} has shape {img.shape}, "
                    f"contract says {self.contract.image_shape}"
                )
        return images

    def decode(self, cs, is_code) -> np.ndarray:
        return self.decode_batch(["q"], [cs], [is_code])["q"]

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rd = self._request_dir()
        protocol.write_image_request(rd, "encode", {"q": image})
        run_codec_command(self.cmd_template, "encode", rd, self.timeout)
        try:
            codes = protocol.read_codes_response(rd)
        except FormatError as exc:
            raise BridgeError(f"malformed encode response: {exc}") from exc
        if "q" not in codes:
            raise BridgeError("encode response missing requested id")
        cs, isc = codes["q"]
        if cs.shape[0] != self.contract.cs_dim or isc.shape[0] != self.contract.is_dim:
            raise BridgeError("encode response dims violate the contract")
        return cs, isc

    def classify(self, image: np.ndarray) -> float:
        rd = self._request_dir()
        protocol.write_image_request(rd, "classify", {"q": image})
        run_codec_command(self.cmd_template, "classify", rd, self.timeout)
        try:
            probs = protocol.read_probs_response(rd)
        except FormatError as exc:
            raise BridgeError(f"malformed classify response: {exc}") from exc
        if "q" not in probs:
            raise BridgeError("classify response missing requested id")
        return probs["q"]
