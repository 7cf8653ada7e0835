"""
    Classifiers living in another process, reached through a line protocol:

        request:  {"id":<uint64>,"shape":[H,W,C],"data":"<base64 little-endian f32>"}
        response: {"id":<same>,"probs":[p1,...,pY]}
        error:    {"id":<same>,"error":"<message>"}

    one JSON document per line, over the stdio pipes of a spawned command or as
    the body of one HTTP POST per message.
"""

import asyncio
import base64
import json
import logging
import shlex
import threading

import aiohttp
import async_timeout
import numpy as np

import settings
from classifiers.base_classifier import BaseClassifier, on_simplex
from errors                     import (ModelProtocolError, ModelTimeoutError,
                                        ModelTransportError)

logger = logging.getLogger(__name__)

WIRE_DTYPE = np.dtype("<f4")


### Wire Format ###
def encode_request(request_id, x):
    x = np.asarray(x)
    data = base64.b64encode(np.ascontiguousarray(x, dtype=WIRE_DTYPE).tobytes())
    message = {"id": request_id, "shape": [int(d) for d in x.shape], "data": data.decode("ascii")}
    return json.dumps(message, separators=(",", ":")).encode("ascii") + b"\n"

def decode_request(line):
    """
        Parse one request line into ``(id, image)``.

        Raises
        ------
        ModelProtocolError:
            the line is not a well-formed request; ``request_id`` is set whenever
            the id could be read.
    """

    message = _parse_line(line)
    request_id = message.get("id")
    if not isinstance(request_id, int) or isinstance(request_id, bool) or request_id < 0:
        raise ModelProtocolError(f"invalid request id {request_id!r}")

    shape = message.get("shape")
    if (not isinstance(shape, list) or len(shape) != 3 or
            not all(isinstance(d, int) and d > 0 for d in shape)):
        raise ModelProtocolError(f"invalid shape {shape!r}", request_id)

    try:
        raw = base64.b64decode(message.get("data", ""), validate=True)
    except (TypeError, ValueError) as error:
        raise ModelProtocolError(f"invalid base64 payload: {error}", request_id) from error
    if len(raw) != int(np.prod(shape)) * WIRE_DTYPE.itemsize:
        raise ModelProtocolError(
            f"payload has {len(raw)} bytes, shape {shape} needs "
            f"{int(np.prod(shape)) * WIRE_DTYPE.itemsize}", request_id
        )

    return request_id, np.frombuffer(raw, WIRE_DTYPE).reshape(shape).astype(np.float64)

def encode_response(request_id, probs=None, error=None):
    message = {"id": request_id}
    if error is not None:
        message["error"] = str(error)
    else:
        message["probs"] = [float(p) for p in probs]
    return json.dumps(message, separators=(",", ":")).encode("ascii") + b"\n"

def decode_response(line):
    message = _parse_line(line)
    request_id = message.get("id")
    if not isinstance(request_id, int) or isinstance(request_id, bool):
        raise ModelProtocolError(f"response carries no valid id: {line[:80]!r}")
    return request_id, message

def _parse_line(line):
    try:
        message = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ModelProtocolError(f"malformed message: {error}") from error
    if not isinstance(message, dict):
        raise ModelProtocolError("message must be a JSON object")
    return message



### Transports ###
class StdioTransport:
    """Talks to a spawned command through its stdin and stdout."""

    def __init__(self, command, cwd=None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.cwd = cwd
        self.process = None

    async def open(self):
        try:
            self.process = await asyncio.create_subprocess_exec(
                *self.argv, stdin=asyncio.subprocess.PIPE,
                stdout=asyncio.subprocess.PIPE, cwd=self.cwd
            )
        except OSError as error:
            raise ModelTransportError(f"Could not start '{self.argv[0]}': {error}") from error
        logger.info(f"Started model server pid={self.process.pid}: {' '.join(self.argv)}")

    async def exchange(self, line):
        if self.process.returncode is not None:
            raise ModelTransportError(f"model server exited with code {self.process.returncode}")
        try:
            self.process.stdin.write(line)
            await self.process.stdin.drain()
        except (BrokenPipeError, ConnectionResetError) as error:
            raise ModelTransportError(f"model server closed its input: {error}") from error
        return await self.receive()

    async def receive(self):
        try:
            reply = await self.process.stdout.readline()
        except (ValueError, asyncio.LimitOverrunError) as error:
            raise ModelProtocolError(f"response line too long: {error}") from error
        if not reply:
            raise ModelTransportError("model server closed its output")
        return reply

    async def close(self):
        if self.process is None or self.process.returncode is not None:
            return
        self.process.stdin.close()
        try:
            async with async_timeout.timeout(5):
                await self.process.wait()
        except asyncio.TimeoutError:
            self.process.kill()
            await self.process.wait()


class HttpTransport:
    """Posts every request line to one URL and reads the response line from the body."""

    def __init__(self, url):
        self.url = url
        self.session = None

    async def open(self):
        self.session = aiohttp.ClientSession()

    async def exchange(self, line):
        try:
            async with self.session.post(self.url, data=line,
                                         headers={"Content-Type": "application/json"}) as response:
                if response.status != 200:
                    raise ModelTransportError(f"HTTP {response.status} from {self.url}")
                return await response.read()
        except aiohttp.ClientError as error:
            raise ModelTransportError(f"Could not reach {self.url}: {error}") from error

    async def receive(self):
        raise ModelProtocolError("no response pending on an HTTP connection")

    async def close(self):
        if self.session is not None:
            await self.session.close()



### Classifier ###
class ExternalModel(BaseClassifier):
    """
        A classifier behind the line protocol. One request is outstanding at a time;
        concurrent callers wait for their turn. Request ids strictly increase, and
        late answers to requests that already timed out are skipped.
    """

    def __init__(self, target, timeout=settings.EXTERNAL_TIMEOUT, input_shape=None,
                 class_count=None, cwd=None):
        super().__init__(input_shape, class_count)
        self.target = target
        self.timeout = timeout
        self.next_id = 1
        self.abandoned = set()
        self.lock = threading.Lock()
        self.loop = asyncio.new_event_loop()

        if isinstance(target, str) and target.startswith(("http://", "https://")):
            self.transport = HttpTransport(target)
        else:
            self.transport = StdioTransport(target, cwd)

        try:
            self.loop.run_until_complete(self.transport.open())
        except Exception:
            self.loop.close()
            raise

    def forward(self, x):
        with self.lock:
            try:
                return self._request(x)
            except ModelTransportError as error:
                logger.warning(f"Retrying after transport error: {error}")
                return self._request(x)

    def close(self):
        with self.lock:
            if self.loop.is_closed():
                return
            self.loop.run_until_complete(self.transport.close())
            self.loop.close()



    ### Helper Methods ###
    def _request(self, x):
        request_id = self.next_id
        self.next_id += 1
        message = self.loop.run_until_complete(
            self._exchange(request_id, encode_request(request_id, x))
        )

        if "error" in message:
            raise ModelProtocolError(f"model server error: {message['error']}", request_id)
        return self._check_probs(message.get("probs"), request_id)

    async def _exchange(self, request_id, line):
        try:
            async with async_timeout.timeout(self.timeout):
                reply = await self.transport.exchange(line)
                while True:
                    reply_id, message = decode_response(reply)
                    if reply_id == request_id:
                        return message
                    if reply_id not in self.abandoned:
                        raise ModelProtocolError(f"unexpected response id {reply_id}", request_id)

                    logger.debug(f"Skipping late response to request {reply_id}")
                    self.abandoned.discard(reply_id)
                    reply = await self.transport.receive()
        except ModelTransportError:
            self.abandoned.add(request_id)
            raise
        except asyncio.TimeoutError as error:
            self.abandoned.add(request_id)
            raise ModelTimeoutError(
                f"request {request_id}: no answer within {self.timeout} seconds"
            ) from error

    def _check_probs(self, probs, request_id):
        if not isinstance(probs, list) or not all(
                isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs):
            raise ModelProtocolError("response has no probability list", request_id)

        if self.class_count is None:
            if len(probs) < 2:
                raise ModelProtocolError(f"got {len(probs)} probabilities", request_id)
            self.class_count = len(probs)
        elif len(probs) != self.class_count:
            raise ModelProtocolError(
                f"expected {self.class_count} probabilities, got {len(probs)}", request_id
            )

        probs = np.array(probs, dtype=np.float64)
        # Non-finite answers are left to the attack, which records them as anomalies
        if np.all(np.isfinite(probs)):
            if not on_simplex(probs):
                raise ModelProtocolError("probabilities are not on the simplex", request_id)
            # losses accept sums within 1e-6 only
            probs = probs / np.sum(probs)
        return probs


def connect_external(target, timeout=settings.EXTERNAL_TIMEOUT, input_shape=None,
                     class_count=None, cwd=None):
    """
        Return a classifier backed by a model server.

        Parameters
        ----------
        target: :class:`str, list`
            an ``http(s)://`` URL, or the command line spawning a stdio server.
        timeout: :class:`float, optional`
            seconds to wait for each answer.
        input_shape: :class:`tuple, optional`
            the image shape the server expects; unchecked if omitted.
        class_count: :class:`int, optional`
            ``Y``; learned from the first answer if omitted.
        cwd: :class:`str, optional`
            working directory of a spawned command.

        Raises
        ------
        ModelTransportError:
            the command could not be started.
    """

    return ExternalModel(target, timeout, input_shape, class_count, cwd)
