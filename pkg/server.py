"""
Oracle Wire Server
Flask application exposing the ground-truth oracle over the completion protocol
"""

import logging
import signal
import threading
from typing import Optional

from flask import Flask, jsonify, request
from werkzeug.exceptions import HTTPException
from werkzeug.serving import BaseWSGIServer, make_server

from complete import (DEPTH_ROUTE, IMAGE_ROUTE, GroundTruthOracle, OracleDepthCompleter,
                      OracleImageCompleter, depth_response_payload, image_response_payload,
                      parse_depth_request, parse_image_request)
from config import SERVER_CONFIG
from error_handlers import InvalidArgumentError, ViewloomError, create_error_response

logger = logging.getLogger(__name__)


def create_app(oracle: GroundTruthOracle) -> Flask:
    """Build the wire-protocol app around one oracle."""
    app = Flask("viewloom")
    image_completer = OracleImageCompleter(oracle)
    depth_completer = OracleDepthCompleter(oracle)

    def json_body():
        body = request.get_json(silent=True)
        if not isinstance(body, dict):
            raise InvalidArgumentError("Request body must be a JSON object")
        return body

    @app.route(IMAGE_ROUTE, methods=["POST"])
    def complete_image():
        completion_request = parse_image_request(json_body())
        completion = image_completer.complete_image(completion_request)
        return jsonify(image_response_payload(completion))

    @app.route(DEPTH_ROUTE, methods=["POST"])
    def complete_depth():
        completion_request = parse_depth_request(json_body())
        depth = depth_completer.complete_depth(completion_request)
        return jsonify(depth_response_payload(depth))

    @app.route("/health")
    def health():
        return jsonify({"status": "ok", "faces": oracle.mesh.face_count})

    @app.errorhandler(InvalidArgumentError)
    def malformed_request(error):
        logger.warning(f"Rejected request to {request.path}: {error}")
        return jsonify(create_error_response("malformed-request", str(error))), 400

    @app.errorhandler(HTTPException)
    def http_error(error):
        return jsonify(create_error_response(error.name.lower().replace(" ", "-"), error.description)), error.code

    @app.errorhandler(ViewloomError)
    def engine_error(error):
        logger.error(f"Oracle failed on {request.path}: {error}")
        return jsonify(create_error_response(error.code, str(error))), 500

    @app.errorhandler(Exception)
    def internal_error(error):
        logger.exception(f"Internal error on {request.path}")
        return jsonify(create_error_response("internal", "An internal error occurred")), 500

    return app


def build_server(app: Flask, host: str = SERVER_CONFIG["host"], port: int = SERVER_CONFIG["port"]) -> BaseWSGIServer:
    """Single-threaded server; requests are handled in arrival order."""
    return make_server(host, port, app, threaded=False)


def serve(app: Flask, host: str = SERVER_CONFIG["host"], port: int = SERVER_CONFIG["port"],
          ready: Optional[threading.Event] = None) -> int:
    """Serve until SIGTERM or SIGINT, then shut down cleanly and return 0."""
    server = build_server(app, host, port)

    def stop(signum, frame):
        logger.info(f"Received signal {signum}, shutting down")
        # shutdown() blocks until serve_forever returns, so it cannot run on this thread
        threading.Thread(target=server.shutdown, daemon=True).start()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
    logger.info(f"Oracle server listening on http://{host}:{server.server_port}")
    if ready is not None:
        ready.set()
    try:
        server.serve_forever()
    finally:
        server.server_close()
    logger.info("Oracle server stopped")
    return 0
