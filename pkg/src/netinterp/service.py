"""HTTP front end.

POST /api/v1/interpret   body: raw speed-test JSON -> InterpretationSummary JSON
GET  /healthz            component status
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass

import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from netinterp.config import PipelineConfig
from netinterp.errors import IngestError, NetInterpError
from netinterp.pipeline import LLMBusy, Pipeline

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 1 << 20


class BindFailure(NetInterpError):
    code = "bind_failure"


def _error(status: int, code: str, message: str, headers: dict[str, str] | None = None) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status, headers=headers)


def create_app(pipeline: Pipeline) -> FastAPI:
    app = FastAPI(title="netinterp", version="0.1.0")
    app.state.pipeline = pipeline

    @app.post("/api/v1/interpret")
    async def interpret(request: Request, no_llm: bool = False):
        body = await request.body()
        if len(body) > MAX_BODY_BYTES:
            return _error(413, "body_too_large", f"request body exceeds {MAX_BODY_BYTES} bytes")
        try:
            summary = await run_in_threadpool(pipeline.interpret, body, not no_llm)
        except IngestError as exc:
            return _error(400, exc.code, str(exc))
        except LLMBusy as exc:
            return _error(503, exc.code, str(exc), headers={"Retry-After": "5"})
        return JSONResponse(summary.to_dict())

    @app.get("/healthz")
    def healthz():
        components = pipeline.health()
        status = "ok" if components["kb"]["reachable"] else "degraded"
        return {"status": status, "components": components}

    return app


def parse_bind(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise BindFailure(f"bind address must look like HOST:PORT, got {address!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


@dataclass
class ServiceHandle:
    server: uvicorn.Server
    sock: socket.socket
    thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.sock.getsockname()[:2]
        if ":" in host:
            host = f"[{host}]"
        return f"http://{host}:{port}"

    def stop(self, timeout: float = 10.0) -> None:
        """Stop accepting connections and let in-flight requests finish."""
        self.server.should_exit = True
        if self.thread is not None:
            self.thread.join(timeout)

    def wait(self) -> None:
        if self.thread is not None:
            self.thread.join()


def serve(cfg: PipelineConfig, bind: str, *, pipeline: Pipeline | None = None, block: bool = True) -> ServiceHandle:
    """Bind and run the service.

    With ``block=True`` (the CLI) this runs in the calling thread and
    returns after SIGINT/SIGTERM, once in-flight requests complete.
    Otherwise the server runs in a background thread and the handle's
    ``stop()`` shuts it down the same way.
    """
    host, port = parse_bind(bind)
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise BindFailure(f"cannot bind {bind}: {exc.strerror}") from exc

    app = create_app(pipeline or Pipeline(cfg))
    config = uvicorn.Config(app, log_level="info", timeout_graceful_shutdown=30)
    server = uvicorn.Server(config)
    handle = ServiceHandle(server, sock)
    if block:
        server.run(sockets=[sock])
        return handle

    # signal handlers can only be installed from the main thread
    server.install_signal_handlers = lambda: None  # type: ignore[method-assign]
    handle.thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    handle.thread.start()
    return handle
