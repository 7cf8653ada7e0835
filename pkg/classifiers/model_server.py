"""
    Reference model server: answers line-protocol requests with the
    probabilities of a toy model, over stdio (default) or HTTP POST.

        python -m classifiers.model_server --model model.bin [--http PORT]
"""

import argparse
import logging
import os
import sys

from aiohttp                    import web

import settings
from classifiers.base_classifier import UniformClassifier
from classifiers.external_model import decode_request, encode_response
from classifiers.toy_model      import load_toy_model
from errors                     import ModelError, ModelProtocolError, ShapeError

logger = logging.getLogger(__name__)

CRASH_EXIT_CODE = 3


def handle_line(model, line):
    """
        Return the response line to one request line. Invalid requests and failed
        predictions are answered with an error message, never raised.
    """

    try:
        request_id, x = decode_request(line)
    except ModelProtocolError as error:
        request_id = error.request_id if error.request_id is not None else 0
        return encode_response(request_id, error=error)

    try:
        probs = model.predict(x)
    except (ShapeError, ModelError) as error:
        return encode_response(request_id, error=error)

    return encode_response(request_id, probs)


class ResponseLimit:
    """Kills the process once ``crash_after`` responses have been sent."""

    def __init__(self, crash_after=None):
        self.crash_after = crash_after
        self.sent = 0

    def count(self):
        self.sent += 1
        if self.crash_after is not None and self.sent >= self.crash_after:
            logger.warning(f"Exiting after {self.sent} responses")
            sys.stdout.flush()
            os._exit(CRASH_EXIT_CODE)


def serve_stdio(model, stdin, stdout, crash_after=None):
    limit = ResponseLimit(crash_after)
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handle_line(model, line))
        stdout.flush()
        limit.count()

def create_app(model, crash_after=None):
    limit = ResponseLimit(crash_after)

    async def predict(request):
        body = await request.read()
        response = web.Response(body=handle_line(model, body),
                                content_type="application/json")
        await response.prepare(request)
        await response.write_eof()
        limit.count()
        return response

    app = web.Application(client_max_size=1024 ** 3)
    app.router.add_post("/", predict)
    app.router.add_post("/predict", predict)
    return app


def build_model(model_path=None, uniform=None):
    if uniform is not None:
        return UniformClassifier(uniform)
    if model_path is None:
        raise ValueError("either a weights file or --uniform is required")
    return load_toy_model(model_path)

def serve(model_path=None, uniform=None, http_port=None, host="127.0.0.1", crash_after=None):
    model = build_model(model_path, uniform)
    if http_port is None:
        logger.info("Serving on stdio")
        serve_stdio(model, sys.stdin.buffer, sys.stdout.buffer, crash_after)
    else:
        logger.info(f"Serving on http://{host}:{http_port}/")
        web.run_app(create_app(model, crash_after), host=host, port=http_port,
                    print=None, access_log=None)


def add_arguments(parser):
    parser.add_argument("--model", help="toy weights file")
    parser.add_argument("--uniform", type=int, metavar="Y",
                        help="answer (1/Y, ..., 1/Y) instead of using a weights file")
    parser.add_argument("--http", type=int, metavar="PORT",
                        help="serve HTTP POST on PORT instead of stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--crash-after", type=int, metavar="K",
                        help="exit after K responses")

def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    add_arguments(parser)
    args = parser.parse_args(argv)

    # stdout carries the protocol, logs go to stderr
    logging.basicConfig(level=settings.LOG_LEVEL, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        serve(args.model, args.uniform, args.http, args.host, args.crash_after)
    except (ValueError, ModelError) as error:
        parser.error(str(error))


if __name__ == "__main__":
    main()
