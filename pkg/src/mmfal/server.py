"""Annotation service: the live labeling oracle behind a small HTTP API.

Endpoints (all JSON, UTF-8):

    GET  /api/v1/queries              pending items awaiting a human label
    POST /api/v1/labels               {"query_id": str, "stage": "F0".."F4"}
    GET  /api/v1/status               {iteration, d, pending_count, last_metrics}
    GET  /api/v1/images/{sample_id}   raw image bytes for display

The AL loop runs in a worker thread and blocks inside the oracle until every
pending query of the current batch is answered. Query ids are tuple ids, so
a browser reload reconstructs the full state from /queries plus /status.
When a ``ui_dir`` is configured, its files are served at ``/`` so the
annotation frontend can run same-origin.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Sequence

from .active_learning import IterationRecord, LoopSchedule, QueryConfig, run_al_loop
from .errors import OracleTimeout
from .experiment import ExperimentConfig, _load_dataset
from .metrics import EvalReport
from .splits import build_tuples, stratified_patient_split
from .training import TensorCache
from .types import DatasetIndex, FibrosisStage, MultiModalSample


@dataclass
class PendingQuery:
    query_id: str
    iteration: int
    images: list[dict]  # [{"modality": ..., "sample_id": ..., "url": ...}]


@dataclass
class _Status:
    iteration: int = 0
    d: float = 0.0
    last_metrics: Optional[dict] = None
    finished: bool = False


class LabelExchange:
    """Thread-safe bridge between the AL loop (producer of queries, consumer
    of labels) and HTTP handlers (the reverse)."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._pending: dict[str, PendingQuery] = {}
        self._answers: dict[str, FibrosisStage] = {}
        self._status = _Status()
        self._shutdown = False

    # -- loop side -----------------------------------------------------------

    def post_queries(self, samples: Sequence[MultiModalSample], iteration: int) -> None:
        with self._cond:
            for sample in samples:
                self._pending[sample.tuple_id] = PendingQuery(
                    query_id=sample.tuple_id,
                    iteration=iteration,
                    images=[
                        {
                            "modality": modality.value,
                            "sample_id": image.sample_id,
                            "url": f"/api/v1/images/{image.sample_id}",
                        }
                        for modality, image in sample.parts
                    ],
                )
            self._cond.notify_all()

    def wait_for_labels(self, timeout: Optional[float] = None) -> dict[str, FibrosisStage]:
        """Block until every pending query is answered; returns and clears them."""
        with self._cond:
            done = self._cond.wait_for(
                lambda: self._shutdown or all(q in self._answers for q in self._pending),
                timeout=timeout,
            )
            if self._shutdown:
                raise OracleTimeout("annotation service is shutting down")
            if not done:
                raise OracleTimeout(f"labels did not arrive within {timeout}s")
            answers = {qid: self._answers[qid] for qid in self._pending}
            self._pending.clear()
            self._answers.clear()
            return answers

    def update_status(self, record: IterationRecord, report: EvalReport) -> None:
        with self._cond:
            self._status.iteration = record.t
            self._status.d = record.d
            self._status.last_metrics = {
                "accuracy": record.accuracy,
                "macro_auc": record.macro_auc,
                "n_labeled": record.n_labeled,
            }

    def mark_finished(self) -> None:
        with self._cond:
            self._status.finished = True
            self._cond.notify_all()

    def shutdown(self) -> None:
        with self._cond:
            self._shutdown = True
            self._cond.notify_all()

    # -- HTTP side -------------------------------------------------------------

    def submit_label(self, query_id: str, stage_token: str) -> tuple[int, dict]:
        try:
            stage = FibrosisStage.parse(stage_token)
        except ValueError as exc:
            return 400, {"error": str(exc)}
        with self._cond:
            if query_id not in self._pending:
                return 404, {"error": f"unknown query id {query_id!r}"}
            if query_id in self._answers:
                return 409, {"error": f"query {query_id!r} already answered"}
            self._answers[query_id] = stage
            self._cond.notify_all()
            return 200, {"status": "accepted", "query_id": query_id, "stage": stage.name}

    def queries_payload(self) -> dict:
        with self._cond:
            items = [
                {
                    "query_id": q.query_id,
                    "iteration": q.iteration,
                    "images": q.images,
                    "answered": q.query_id in self._answers,
                }
                for q in self._pending.values()
                if q.query_id not in self._answers
            ]
            return {"queries": items}

    def status_payload(self) -> dict:
        with self._cond:
            return {
                "iteration": self._status.iteration,
                "d": self._status.d,
                "pending_count": sum(
                    1 for q in self._pending if q not in self._answers
                ),
                "last_metrics": self._status.last_metrics,
                "finished": self._status.finished,
            }


class LiveOracle:
    """Oracle that forwards queries to the exchange and blocks for humans."""

    def __init__(self, exchange: LabelExchange, timeout: Optional[float] = None) -> None:
        self.exchange = exchange
        self.timeout = timeout
        self.iteration = 0

    def __call__(self, samples: Sequence[MultiModalSample]) -> list[FibrosisStage]:
        self.exchange.post_queries(samples, self.iteration)
        answers = self.exchange.wait_for_labels(self.timeout)
        self.iteration += 1
        return [answers[s.tuple_id] for s in samples]


def _make_handler(exchange: LabelExchange, index: DatasetIndex, ui_dir: Optional[Path], token: Optional[str]):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, code: int, body: bytes, content_type: str) -> None:
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type, X-Annotation-Token")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/v1/queries":
                self._send_json(200, exchange.queries_payload())
            elif self.path == "/api/v1/status":
                self._send_json(200, exchange.status_payload())
            elif self.path.startswith("/api/v1/images/"):
                sample_id = self.path[len("/api/v1/images/"):]
                try:
                    sample = index.sample(sample_id)
                except KeyError:
                    self._send_json(404, {"error": f"unknown sample {sample_id!r}"})
                    return
                try:
                    body = Path(sample.source_path).read_bytes()
                except OSError:
                    self._send_json(404, {"error": "image file unavailable"})
                    return
                content_type = mimetypes.guess_type(str(sample.source_path))[0] or "application/octet-stream"
                self._send_bytes(200, body, content_type)
            elif ui_dir is not None:
                self._serve_static()
            else:
                self._send_json(404, {"error": "not found"})

        def _serve_static(self):
            relative = self.path.lstrip("/") or "index.html"
            target = (ui_dir / relative).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self._send_bytes(200, target.read_bytes(), content_type)

        def do_POST(self):
            if self.path != "/api/v1/labels":
                self._send_json(404, {"error": "not found"})
                return
            if token is not None and self.headers.get("X-Annotation-Token") != token:
                self._send_json(401, {"error": "missing or invalid token"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            try:
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                query_id = payload["query_id"]
                stage = payload["stage"]
            except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
                self._send_json(400, {"error": f"malformed submission: {exc}"})
                return
            code, response = exchange.submit_label(str(query_id), str(stage))
            self._send_json(code, response)

    return Handler


@dataclass
class AnnotationService:
    """Handle for a running annotation server plus its AL loop thread."""

    server: ThreadingHTTPServer
    exchange: LabelExchange
    loop_thread: threading.Thread
    server_thread: threading.Thread
    host: str
    port: int
    loop_error: list = field(default_factory=list)

    @property
    def address(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self, join_timeout: float = 10.0) -> None:
        """Graceful shutdown: unblock the loop, then stop serving.

        The loop checkpoints after every completed iteration, so stopping
        mid-query loses nothing beyond the unanswered batch.
        """
        self.exchange.shutdown()
        self.loop_thread.join(timeout=join_timeout)
        self.server.shutdown()
        self.server.server_close()
        self.server_thread.join(timeout=join_timeout)


def serve_annotation(
    config: ExperimentConfig,
    host: str = "127.0.0.1",
    port: int = 8765,
    ui_dir: Optional[str | Path] = None,
    token: Optional[str] = None,
    oracle_timeout: Optional[float] = None,
) -> AnnotationService:
    """Start the annotation HTTP service with the AL loop in live-oracle mode.

    Returns a running service handle; call ``.stop()`` for graceful shutdown.
    Requires an AL query config (the loop is what generates label requests).
    """
    if config.query is None:
        raise ValueError("live annotation needs an active-learning query config")

    index = _load_dataset(config)
    train_ids, test_ids = stratified_patient_split(index, config.train_fraction, config.split_seed)
    train_tuples = build_tuples(index, config.modalities, train_ids)
    test_tuples = build_tuples(index, config.modalities, test_ids)
    size = (config.model.input_size, config.model.input_size)
    cache = TensorCache(size, config.model.normalization)

    exchange = LabelExchange()
    oracle = LiveOracle(exchange, timeout=oracle_timeout)

    handler = _make_handler(exchange, index, Path(ui_dir) if ui_dir else None, token)
    server = ThreadingHTTPServer((host, port), handler)
    actual_port = server.server_address[1]

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    pool_size = len(train_tuples)
    seed_size = max(1, round(config.seed_fraction * pool_size))
    n_query = config.query.n_query
    if config.n_query_fraction is not None:
        n_query = max(1, round(config.n_query_fraction * pool_size))
    query = QueryConfig(
        strategy=config.query.strategy,
        n_query=n_query,
        n_mc=config.query.n_mc,
        seed=config.query.seed,
    )
    schedule = LoopSchedule(
        seed_size=seed_size,
        epochs_per_iteration=config.epochs_per_iteration,
        initial_epochs=config.train.epochs,
        max_iterations=config.max_iterations,
        target_budget=config.target_budget,
    )

    loop_error: list = []

    def run_loop():
        try:
            history, model, report = run_al_loop(
                train_tuples, test_tuples, config.model, config.train, query, schedule,
                cache, oracle=oracle,
                checkpoint_path=out / "loop.ckpt",
                on_iteration=exchange.update_status,
            )
            history.to_csv(out / "history.csv")
            history.write_sidecar(out / "history_meta.json")
            exchange.mark_finished()
        except OracleTimeout:
            pass  # graceful shutdown path
        except Exception as exc:  # surfaced via the handle
            loop_error.append(exc)

    loop_thread = threading.Thread(target=run_loop, name="al-loop", daemon=True)
    server_thread = threading.Thread(target=server.serve_forever, name="annotation-http", daemon=True)
    loop_thread.start()
    server_thread.start()

    return AnnotationService(
        server=server,
        exchange=exchange,
        loop_thread=loop_thread,
        server_thread=server_thread,
        host=host,
        port=actual_port,
        loop_error=loop_error,
    )
