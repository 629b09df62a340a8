"""Pluggable model backends: mask infilling, translation, quality scoring.

A backend is declared by a :class:`BackendSpec` and reached through one of
three transports: ``http`` (a chat-completion or scorer endpoint), ``stub``
(deterministic local behavior for tests and dry runs), or ``replay_cache``
(serve previously cached responses only). Every call goes through a
content-addressed response cache when one is configured, so warm reruns never
repeat an upstream request. Scores are returned exactly as the backend
produced them; nothing is clamped or rounded here.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import requests

from .segmentation import MASK_TOKEN

if TYPE_CHECKING:  # pragma: no cover
    from .casegen import PromptRequest

KINDS = ("infill", "translator", "scorer_ref_based", "scorer_ref_free")
TRANSPORTS = ("http", "replay_cache", "stub")

# System message sent with every chat call, infill and direct translation alike.
CHAT_SYSTEM_LINE = "You are a helpful assistant that translates English to Chinese."

_BACKOFF_BASE_SECONDS = 0.25


class BackendError(Exception):
    """Base class for backend failures; ``retryable`` drives the retry loop."""

    retryable = False


class BackendTimeout(BackendError):
    retryable = True


class HttpStatusError(BackendError):
    def __init__(self, status: int, detail: str = ""):
        message = f"HTTP {status}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.status = status
        self.retryable = status == 429 or status >= 500


class CacheMissError(BackendError):
    """Replay transport found no cached response. Retrying cannot help."""


class NonNumericReplyError(BackendError):
    """A scorer endpoint replied with something that is not a number."""


class MalformedReplyError(BackendError):
    """A chat endpoint replied without the expected message structure."""


@dataclass(frozen=True)
class BackendSpec:
    """Declarative description of one backend, as found in the run config."""

    backend_id: str
    kind: str
    transport: str
    endpoint: str | None = None
    model_name: str | None = None
    auth_env_var: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    stub_params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.backend_id:
            raise ValueError("backend_id must not be empty")
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.transport == "http" and not self.endpoint:
            raise ValueError("http transport requires an endpoint")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must not be negative")

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "BackendSpec":
        if not isinstance(data, Mapping):
            raise ValueError(f"backend spec must be an object, got {data!r}")
        known = {
            "backend_id",
            "kind",
            "transport",
            "endpoint",
            "model_name",
            "auth_env_var",
            "timeout",
            "max_retries",
            "stub_params",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown backend spec fields: {unknown}")
        for required in ("backend_id", "kind", "transport"):
            if required not in data:
                raise ValueError(f"backend spec is missing {required!r}")
        return cls(**dict(data))


def canonical_request_digest(backend_id: str, request: Mapping[str, object]) -> str:
    """Content address of one request: sha256 over a canonical JSON encoding."""
    blob = json.dumps(
        {"backend_id": backend_id, "request": request},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """File-backed response cache: ``<root>/<backend_id>/<digest>.entry``."""

    def __init__(self, root):
        self.root = Path(root)

    def entry_path(self, backend_id: str, digest: str) -> Path:
        return self.root / backend_id / f"{digest}.entry"

    def get(self, backend_id: str, digest: str) -> tuple[bool, object]:
        path = self.entry_path(backend_id, digest)
        if not path.exists():
            return False, None
        with open(path, encoding="utf-8") as handle:
            entry = json.load(handle)
        return True, entry["value"]

    def put(
        self, backend_id: str, digest: str, request: Mapping[str, object], value: object
    ) -> None:
        path = self.entry_path(backend_id, digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "digest": digest,
            "request": request,
            "value": value,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        blob = json.dumps(entry, ensure_ascii=False, indent=2)
        temp = path.parent / f".{digest}.{os.getpid()}.{threading.get_ident()}.tmp"
        with open(temp, "w", encoding="utf-8") as handle:
            handle.write(blob)
        os.replace(temp, path)


def chat_request(model_name: str | None, user_content: str) -> dict:
    return {
        "model": model_name,
        "messages": [
            {"role": "system", "content": CHAT_SYSTEM_LINE},
            {"role": "user", "content": user_content},
        ],
    }


class _HttpTransport:
    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self._headers = {}
        if spec.auth_env_var:
            key = os.environ.get(spec.auth_env_var)
            if not key:
                raise BackendError(
                    f"backend {spec.backend_id!r}: environment variable "
                    f"{spec.auth_env_var} is not set"
                )
            self._headers["Authorization"] = f"Bearer {key}"

    def send(self, request: Mapping[str, object], context=None) -> object:
        try:
            response = requests.post(
                self.spec.endpoint,
                json=request,
                headers=self._headers,
                timeout=self.spec.timeout,
            )
        except requests.Timeout as exc:
            raise BackendTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if response.status_code != 200:
            raise HttpStatusError(response.status_code, response.text[:200])
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedReplyError("response body is not JSON") from exc


class _StubTransport:
    """Deterministic local stand-in for an upstream model.

    ``stub_params`` configure it. Infill: ``src``/``ref`` are the fill strings
    substituted for each mask. Translator: optional ``table`` maps exact source
    strings to outputs, identity otherwise. Scorers: ``mode`` is one of
    ``unigram_f1`` (default for scorer_ref_based), ``length_ratio`` (default
    for scorer_ref_free), ``token_overlap``, ``digest``, or ``constant`` with
    ``value``.
    """

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self.params = dict(spec.stub_params)

    def send(self, request: Mapping[str, object], context=None) -> object:
        kind = self.spec.kind
        if kind == "infill":
            return _chat_shape(self._infill_reply(context))
        if kind == "translator":
            user = request["messages"][-1]["content"]
            table = self.params.get("table") or {}
            return _chat_shape(table.get(user, user))
        return {"score": self._score(request)}

    def _infill_reply(self, context) -> str:
        if not context or "masked_source" not in context:
            raise BackendError("stub infill requires prompt metadata")
        src_fill = str(self.params.get("src", "thing"))
        ref_fill = str(self.params.get("ref", "东西"))
        filled_src = context["masked_source"].replace(MASK_TOKEN, src_fill)
        filled_ref = context["masked_reference"].replace(MASK_TOKEN, ref_fill)
        return f"Filled English: {filled_src}\nFilled Chinese: {filled_ref}"

    def _score(self, request: Mapping[str, object]) -> float:
        src = str(request.get("src", ""))
        hyp = str(request.get("hyp", ""))
        ref = request.get("ref")
        default = "unigram_f1" if self.spec.kind == "scorer_ref_based" else "length_ratio"
        mode = self.params.get("mode", default)
        if mode == "constant":
            return float(self.params["value"])
        if mode == "digest":
            blob = "\x00".join([src, hyp, str(ref)])
            prefix = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:8]
            return int(prefix, 16) / 2**32
        other = str(ref) if ref is not None else src
        if mode == "unigram_f1":
            return _unigram_f1(hyp.split(), other.split())
        if mode == "token_overlap":
            return _token_overlap(hyp.split(), other.split())
        if mode == "length_ratio":
            return _length_ratio(hyp.split(), other.split())
        raise BackendError(f"unknown stub scorer mode {mode!r}")


def _chat_shape(content: str) -> dict:
    return {"choices": [{"message": {"content": content}}]}


def _overlap_count(left: list[str], right: list[str]) -> int:
    counts: dict[str, int] = {}
    for token in right:
        counts[token] = counts.get(token, 0) + 1
    overlap = 0
    for token in left:
        if counts.get(token, 0) > 0:
            counts[token] -= 1
            overlap += 1
    return overlap


def _unigram_f1(hyp: list[str], ref: list[str]) -> float:
    if not hyp or not ref:
        return 0.0
    overlap = _overlap_count(hyp, ref)
    return 2 * overlap / (len(hyp) + len(ref))


def _token_overlap(hyp: list[str], ref: list[str]) -> float:
    if not hyp and not ref:
        return 1.0
    return _overlap_count(hyp, ref) / max(len(hyp), len(ref))


def _length_ratio(hyp: list[str], ref: list[str]) -> float:
    if not hyp and not ref:
        return 1.0
    longer = max(len(hyp), len(ref))
    return min(len(hyp), len(ref)) / longer if longer else 1.0


class Backend:
    """One callable backend with caching, retries, and in-flight deduplication.

    ``transport`` may be injected for tests; anything with a
    ``send(request, context) -> parsed JSON`` method works. ``sleep`` is called
    with the backoff delay between retries and defaults to ``time.sleep``.
    """

    def __init__(self, spec: BackendSpec, cache: ResponseCache | None = None,
                 transport=None, sleep=None):
        self.spec = spec
        self.cache = cache
        if transport is None and spec.transport == "http":
            transport = _HttpTransport(spec)
        elif transport is None and spec.transport == "stub":
            transport = _StubTransport(spec)
        elif transport is None and spec.transport == "replay_cache":
            if cache is None:
                raise ValueError("replay_cache transport requires a response cache")
        self._transport = transport
        self._sleep = time.sleep if sleep is None else sleep
        self._registry_lock = threading.Lock()
        self._in_flight: dict[str, threading.Lock] = {}

    def infill(self, prompt: "PromptRequest") -> str:
        self._require_kind("infill")
        request = chat_request(self.spec.model_name, prompt.rendered_text)
        return self._request(request, context=prompt.metadata)

    def translate(self, source_text: str) -> str:
        self._require_kind("translator")
        request = chat_request(self.spec.model_name, source_text)
        return self._request(request)

    def score(self, source: str, hypothesis: str, reference: str | None = None) -> float:
        if reference is None:
            self._require_kind("scorer_ref_free")
            request = {"src": source, "hyp": hypothesis}
        else:
            self._require_kind("scorer_ref_based")
            request = {"src": source, "hyp": hypothesis, "ref": reference}
        return self._request(request)

    def _require_kind(self, kind: str) -> None:
        if self.spec.kind != kind:
            raise ValueError(
                f"backend {self.spec.backend_id!r} has kind {self.spec.kind!r}, "
                f"this call needs {kind!r}"
            )

    def _request(self, request: dict, context=None) -> object:
        digest = canonical_request_digest(self.spec.backend_id, request)
        if self.cache is None:
            return self._call_upstream(request, context, digest)
        hit, value = self.cache.get(self.spec.backend_id, digest)
        if hit:
            return value
        with self._key_lock(digest):
            hit, value = self.cache.get(self.spec.backend_id, digest)
            if hit:
                return value
            value = self._call_upstream(request, context, digest)
            self.cache.put(self.spec.backend_id, digest, request, value)
            return value

    def _key_lock(self, digest: str) -> threading.Lock:
        with self._registry_lock:
            return self._in_flight.setdefault(digest, threading.Lock())

    def _call_upstream(self, request: dict, context, digest: str) -> object:
        if self._transport is None:
            raise CacheMissError(
                f"backend {self.spec.backend_id!r}: no cached response for request "
                f"{digest[:12]}"
            )
        attempt = 0
        while True:
            try:
                raw = self._transport.send(request, context)
                return self._extract(raw)
            except BackendError as exc:
                if not exc.retryable or attempt >= self.spec.max_retries:
                    raise
                self._sleep(_BACKOFF_BASE_SECONDS * (2**attempt))
                attempt += 1

    def _extract(self, raw: object) -> object:
        if self.spec.kind in ("infill", "translator"):
            try:
                content = raw["choices"][0]["message"]["content"]
            except (TypeError, KeyError, IndexError) as exc:
                raise MalformedReplyError(f"unexpected chat reply shape: {raw!r}") from exc
            if not isinstance(content, str):
                raise MalformedReplyError(f"chat content is not text: {content!r}")
            return content
        return _extract_score(raw)


def _extract_score(raw: object) -> float:
    value = raw
    if isinstance(raw, dict):
        if "score" not in raw:
            raise NonNumericReplyError(f"scorer reply has no score field: {raw!r}")
        value = raw["score"]
    if isinstance(value, bool):
        raise NonNumericReplyError(f"scorer reply is not numeric: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    raise NonNumericReplyError(f"scorer reply is not numeric: {value!r}")


@dataclass
class Backends:
    """The backend slots a pipeline stage may need."""

    infill: Backend | None = None
    translator: Backend | None = None
    scorer_ref_based: Backend | None = None
    scorer_ref_free: Backend | None = None
