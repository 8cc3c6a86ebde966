"""Uniform contract for external LLM capabilities: completion and training.

Three implementations ship here. ``HTTPBackend`` speaks the de-facto
chat-completions JSON shape and a submit+poll training protocol.
``SubprocessBackend`` talks JSONL over stdin/stdout for completions and
invokes a trainer command that prints the produced model reference on its
final output line. ``MockBackend`` serves canned fixtures for tests.

Every completion can be routed through a :class:`CompletionCache`; the cache
key covers the prompt, the handle identity, and the decoding params, so any
change to the backend or its settings invalidates cleanly.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .cache import CompletionCache, completion_key

__all__ = [
    "Backend",
    "BackendError",
    "CompletionCache",
    "DecodingParams",
    "HTTPBackend",
    "MockBackend",
    "ProtocolError",
    "RetryPolicy",
    "SubprocessBackend",
    "TokenBucket",
    "TrainError",
    "TrainJob",
    "TransportError",
    "complete",
    "train",
]


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Retryable failure: network trouble, dead subprocess, 5xx."""


class ProtocolError(BackendError):
    """Non-retryable failure: malformed response, rejected request."""


class TrainError(BackendError):
    pass


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DecodingParams:
    """Decoding settings; greedy with a modest output cap by default."""

    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] = ("\n\n",)

    def as_json(self) -> str:
        return json.dumps(
            {"temperature": self.temperature, "max_tokens": self.max_tokens, "stop": list(self.stop)},
            sort_keys=True,
        )


@dataclass
class RetryPolicy:
    """Exponential backoff for transport failures; also bounds validation
    retries in the compressor."""

    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 30.0
    sleep: object = time.sleep  # injectable for tests

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * (2**attempt))


class TokenBucket:
    """Simple rate limiter: ``rate`` acquisitions per second, bursting up to
    ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class TrainJob:
    """One delegated fine-tuning job; immutable once completed."""

    dataset_path: str | Path
    hyperparams: dict = field(default_factory=dict)
    output_model_ref: str | None = None

    def mark_completed(self, model_ref: str) -> None:
        if self.output_model_ref is not None:
            raise TrainError("train job already completed")
        self.output_model_ref = model_ref


class Backend:
    """Base handle. Subclasses implement raw transport; use the module-level
    :func:`complete` and :func:`train` wrappers, which add caching, retry,
    and rate limiting."""

    kind = "abstract"

    def __init__(
        self,
        model: str = "",
        capabilities: frozenset[str] = frozenset({"complete"}),
        params: DecodingParams | None = None,
        rate_limit: float | None = None,
        max_parallel: int | None = None,
    ):
        self.model = model
        self.capabilities = capabilities
        self.params = params or DecodingParams()
        self._bucket = TokenBucket(rate_limit) if rate_limit else None
        self._parallel = threading.BoundedSemaphore(max_parallel) if max_parallel else None
        self._train_lock = threading.Lock()

    def _identity_core(self) -> str:
        raise NotImplementedError

    @property
    def identity(self) -> str:
        params_tag = _digest(self.params.as_json())[:12]
        return f"{self.kind}:{self._identity_core()}:{self.model}:params={params_tag}"

    def _complete_once(self, prompt: str) -> str:
        raise NotImplementedError

    def _train_once(self, job: TrainJob) -> "Backend":
        raise NotImplementedError


def complete(
    backend: Backend,
    prompt: str,
    cache: CompletionCache | None = None,
    retry: RetryPolicy | None = None,
) -> str:
    """Run one completion with caching and transport retry.

    A cache hit returns without touching the backend. The cached record is
    verified against the full (prompt, identity, params) triple before being
    served, so hash collisions cannot leak a foreign completion.
    """
    if "complete" not in backend.capabilities:
        raise BackendError(f"backend {backend.identity} cannot complete")
    params_json = backend.params.as_json()
    key = completion_key(prompt, backend.identity, params_json)
    if cache is not None:
        hit = cache.get(key, prompt, backend.identity, params_json)
        if hit is not None:
            return hit

    retry = retry or RetryPolicy()
    if backend._bucket is not None:
        backend._bucket.acquire()
    last_error: Exception | None = None
    for attempt in range(retry.max_attempts):
        try:
            if backend._parallel is not None:
                with backend._parallel:
                    completion = backend._complete_once(prompt)
            else:
                completion = backend._complete_once(prompt)
            break
        except TransportError as exc:
            last_error = exc
            if attempt + 1 < retry.max_attempts:
                retry.sleep(retry.delay(attempt))
    else:
        raise TransportError(
            f"backend {backend.identity} failed after {retry.max_attempts} attempts: {last_error}"
        )
    if cache is not None:
        cache.put(key, prompt, backend.identity, params_json, completion)
    return completion


def _validate_dataset_file(path: Path) -> None:
    if not path.exists():
        raise TrainError(f"dataset file does not exist: {path}")
    with path.open(encoding="utf-8") as handle:
        count = 0
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise TrainError(f"{path}: line {line_no} is not valid JSON") from None
            if "input" not in obj or "target" not in obj:
                raise TrainError(f"{path}: line {line_no} lacks input/target fields")
            count += 1
    if count == 0:
        raise TrainError(f"{path}: empty training dataset")


def train(backend: Backend, job: TrainJob) -> Backend:
    """Delegate one training job; returns a handle for the produced model.

    Serialized per handle: concurrent train calls on one backend queue up.
    """
    if "train" not in backend.capabilities:
        raise BackendError(f"backend {backend.identity} cannot train")
    _validate_dataset_file(Path(job.dataset_path))
    with backend._train_lock:
        trained = backend._train_once(job)
    return trained


# ---------------------------------------------------------------------------
# HTTP implementation (chat-completions shape; submit+poll training).
# ---------------------------------------------------------------------------

class HTTPBackend(Backend):
    kind = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        capabilities: frozenset[str] = frozenset({"complete"}),
        params: DecodingParams | None = None,
        timeout: float = 120.0,
        poll_interval: float = 2.0,
        session: requests.Session | None = None,
        **kwargs,
    ):
        super().__init__(model=model, capabilities=capabilities, params=params, **kwargs)
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.poll_interval = poll_interval
        self.session = session or requests.Session()

    def _identity_core(self) -> str:
        return self.endpoint

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _complete_once(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
            "stop": list(self.params.stop),
        }
        try:
            response = self.session.post(
                f"{self.endpoint}/v1/chat/completions",
                json=payload,
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from None
        if response.status_code >= 500:
            raise TransportError(f"server error {response.status_code}")
        if response.status_code >= 400:
            raise ProtocolError(
                f"request rejected ({response.status_code}): {response.text[:200]} "
                f"[prompt digest {_digest(prompt)[:12]}]"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError):
            raise ProtocolError("malformed completion response") from None

    def _train_once(self, job: TrainJob) -> Backend:
        payload = {"dataset_path": str(job.dataset_path), "hyperparams": job.hyperparams}
        try:
            response = self.session.post(
                f"{self.endpoint}/v1/train", json=payload, headers=self._headers(), timeout=self.timeout
            )
            response.raise_for_status()
            job_id = response.json()["job_id"]
        except (requests.RequestException, ValueError, KeyError) as exc:
            raise TrainError(f"train submit failed: {exc}") from None
        while True:
            try:
                response = self.session.get(
                    f"{self.endpoint}/v1/train/{job_id}", headers=self._headers(), timeout=self.timeout
                )
                response.raise_for_status()
                status = response.json()
            except (requests.RequestException, ValueError) as exc:
                raise TrainError(f"train poll failed: {exc}") from None
            if status.get("status") == "succeeded":
                model_ref = status["model"]
                break
            if status.get("status") == "failed":
                raise TrainError(f"train job failed: {status.get('error', 'unknown error')}")
            time.sleep(self.poll_interval)
        job.mark_completed(model_ref)
        return HTTPBackend(
            endpoint=self.endpoint,
            model=model_ref,
            api_key=self.api_key,
            capabilities=self.capabilities,
            params=self.params,
            timeout=self.timeout,
            poll_interval=self.poll_interval,
            session=self.session,
        )


# ---------------------------------------------------------------------------
# Subprocess implementation (JSONL stdin/stdout completions; CLI trainer).
# ---------------------------------------------------------------------------

class SubprocessBackend(Backend):
    kind = "command"

    def __init__(
        self,
        complete_command: list[str] | None = None,
        train_command: list[str] | None = None,
        serve_template: list[str] | None = None,
        model: str = "",
        params: DecodingParams | None = None,
        **kwargs,
    ):
        capabilities = set()
        if complete_command:
            capabilities.add("complete")
        if train_command:
            capabilities.add("train")
        super().__init__(model=model, capabilities=frozenset(capabilities), params=params, **kwargs)
        self.complete_command = complete_command
        self.train_command = train_command
        self.serve_template = serve_template
        self._proc: subprocess.Popen | None = None
        self._proc_lock = threading.Lock()

    def _identity_core(self) -> str:
        raw = json.dumps([self.complete_command, self.train_command], sort_keys=True)
        return _digest(raw)[:16]

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.complete_command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        return self._proc

    def _complete_once(self, prompt: str) -> str:
        request = json.dumps(
            {"prompt": prompt, "params": json.loads(self.params.as_json()), "model": self.model},
            ensure_ascii=False,
        )
        with self._proc_lock:
            try:
                proc = self._ensure_proc()
                proc.stdin.write(request + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"subprocess pipe failure: {exc}") from None
        if not line:
            raise TransportError("subprocess closed its stdout")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"subprocess emitted non-JSON line: {line[:200]!r}") from None
        if "error" in obj:
            raise ProtocolError(f"subprocess reported error: {obj['error']}")
        if "completion" not in obj:
            raise ProtocolError("subprocess response lacks 'completion'")
        return obj["completion"]

    def _train_once(self, job: TrainJob) -> Backend:
        result = subprocess.run(
            list(self.train_command) + [str(job.dataset_path)],
            capture_output=True,
            text=True,
        )
        if result.returncode != 0:
            tail = result.stderr.strip().splitlines()[-5:]
            raise TrainError(
                f"trainer exited {result.returncode}; stderr tail: {' | '.join(tail) or '(empty)'}"
            )
        lines = [l for l in result.stdout.strip().splitlines() if l.strip()]
        if not lines:
            raise TrainError("trainer produced no output; expected a model reference")
        model_ref = lines[-1].strip()
        job.mark_completed(model_ref)
        serve_command = None
        if self.serve_template:
            serve_command = [arg.replace("{model}", model_ref) for arg in self.serve_template]
        elif self.complete_command:
            serve_command = list(self.complete_command)
        return SubprocessBackend(
            complete_command=serve_command,
            train_command=self.train_command,
            serve_template=self.serve_template,
            model=model_ref,
            params=self.params,
        )

    def close(self) -> None:
        with self._proc_lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            self._proc = None


# ---------------------------------------------------------------------------
# Mock implementation (fixture table; digest-tagged trainer).
# ---------------------------------------------------------------------------

class MockBackend(Backend):
    kind = "mock"

    def __init__(
        self,
        fixtures: dict[str, str] | None = None,
        default_fn=None,
        label: str = "fixture",
        model: str = "mock-model",
        capabilities: frozenset[str] = frozenset({"complete", "train"}),
        params: DecodingParams | None = None,
        **kwargs,
    ):
        super().__init__(model=model, capabilities=capabilities, params=params, **kwargs)
        self.fixtures = dict(fixtures or {})
        self.default_fn = default_fn
        self.label = label
        self.calls = 0
        self.train_calls = 0
        self._calls_lock = threading.Lock()

    def _identity_core(self) -> str:
        return self.label

    def _complete_once(self, prompt: str) -> str:
        with self._calls_lock:
            self.calls += 1
        if prompt in self.fixtures:
            return self.fixtures[prompt]
        if self.default_fn is not None:
            return self.default_fn(prompt)
        raise ProtocolError(f"no fixture for prompt digest {_digest(prompt)[:12]}")

    def _train_once(self, job: TrainJob) -> Backend:
        with self._calls_lock:
            self.train_calls += 1
        dataset_digest = _digest(Path(job.dataset_path).read_text(encoding="utf-8"))
        model_ref = f"trained-{dataset_digest[:12]}"
        job.mark_completed(model_ref)
        return MockBackend(
            fixtures=self.fixtures,
            default_fn=self.default_fn,
            label=self.label,
            model=model_ref,
            capabilities=self.capabilities,
            params=self.params,
        )
