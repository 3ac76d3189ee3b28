"""Language/advisor/embedding clients.

Tests and benchmarks run on deterministic scripted mocks; a real HTTP backend
exists behind the same interface but is strictly opt-in. The module-level
default transport refuses to touch the network, so nothing can silently
escalate from mock to live traffic.
"""

from __future__ import annotations

import hashlib
import json
import re
import urllib.request
from dataclasses import dataclass, field

import numpy as np
import yaml

from .graph import count_text_tokens


class ModelClientError(RuntimeError):
    pass


class ScriptExhaustedError(ModelClientError):
    """No scripted entry or fallback matches the request ('script exhausted')."""


class AdvisorUnavailableError(ModelClientError):
    """Advisor transport failed; the caller should fall back to gradient steps."""


class NetworkDisabledError(ModelClientError):
    """Raised by the sentinel transport: no live endpoint was configured."""


def sentinel_transport(url: str, payload: dict, timeout: float = 30.0) -> dict:
    """Default transport. Always raises; a real transport must be injected
    explicitly to reach the network."""
    sentinel_transport.calls += 1
    raise NetworkDisabledError(f"network disabled: refusing request to {url}")


sentinel_transport.calls = 0

# Injected by HTTP clients unless a transport is passed explicitly.
DEFAULT_TRANSPORT = sentinel_transport


def urllib_transport(url: str, payload: dict, timeout: float = 30.0) -> dict:
    data = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def payload_hash(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelRequest:
    """One call to a model: kind tags the call site (decompose, distill_select,
    synthesize, il_advise), payload is the full prompt text.

    graph_tokens declares how many of the payload's tokens belong to the
    graph-content section, so the log can account for them separately."""

    kind: str
    payload: str
    graph_tokens: int = 0


@dataclass
class ScriptEntry:
    kind: str
    response: str
    match: str = "sequence"  # or "hash"
    hash: str | None = None


class MockScript:
    """Deterministic canned responses.

    Two matchers: 'hash' entries answer any request whose payload hash matches
    (reusable), 'sequence' entries are consumed once, in file order, per kind.
    A per-kind fallback answers when nothing else does.
    """

    def __init__(self, entries: list[ScriptEntry], fallbacks: dict[str, str] | None = None):
        self.fallbacks = dict(fallbacks or {})
        self._by_hash: dict[tuple[str, str], str] = {}
        self._queues: dict[str, list[str]] = {}
        for e in entries:
            if e.match == "hash":
                if not e.hash:
                    raise ModelClientError("hash-matched entry needs a hash")
                self._by_hash[(e.kind, e.hash)] = e.response
            elif e.match == "sequence":
                self._queues.setdefault(e.kind, []).append(e.response)
            else:
                raise ModelClientError(f"unknown matcher {e.match!r}")
        self._cursors: dict[str, int] = {}

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        entries = [
            ScriptEntry(
                kind=item["kind"],
                response=str(item["response"]),
                match=item.get("match", "sequence"),
                hash=item.get("hash"),
            )
            for item in data.get("entries", [])
        ]
        return cls(entries, fallbacks=data.get("fallbacks"))

    @classmethod
    def from_file(cls, path) -> "MockScript":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ModelClientError(f"bad script file {path}")
        return cls.from_dict(data)

    def respond(self, request: ModelRequest) -> str:
        key = (request.kind, payload_hash(request.payload))
        if key in self._by_hash:
            return self._by_hash[key]
        queue = self._queues.get(request.kind, [])
        cursor = self._cursors.get(request.kind, 0)
        if cursor < len(queue):
            self._cursors[request.kind] = cursor + 1
            return queue[cursor]
        if request.kind in self.fallbacks:
            return self.fallbacks[request.kind]
        raise ScriptExhaustedError(f"script exhausted for kind {request.kind!r}")


@dataclass
class LogEntry:
    kind: str
    request: str
    response: str
    prompt_tokens: int = 0
    graph_tokens: int = 0


def _entry_for(request: ModelRequest, response: str) -> LogEntry:
    return LogEntry(
        kind=request.kind,
        request=request.payload,
        response=response,
        prompt_tokens=count_text_tokens(request.payload),
        graph_tokens=request.graph_tokens,
    )


class ModelLog:
    """Episode-scoped verbatim request/response log."""

    def __init__(self):
        self.entries: list[LogEntry] = []

    def append(self, entry: LogEntry) -> None:
        self.entries.append(entry)

    def as_dicts(self) -> list[dict]:
        return [
            {
                "kind": e.kind,
                "request": e.request,
                "response": e.response,
                "prompt_tokens": e.prompt_tokens,
                "graph_tokens": e.graph_tokens,
            }
            for e in self.entries
        ]


class MockChatClient:
    """Chat backend driven by a MockScript."""

    def __init__(self, script: MockScript, log: ModelLog | None = None):
        self.script = script
        self.log = log if log is not None else ModelLog()

    def chat(self, request: ModelRequest) -> str:
        response = self.script.respond(request)
        self.log.append(_entry_for(request, response))
        return response


class MockAdvisorClient:
    """Advisor backend driven by a MockScript (kind 'il_advise').

    Script exhaustion surfaces as AdvisorUnavailableError so the evolution
    loop can degrade to gradient-only epochs.
    """

    def __init__(self, script: MockScript, log: ModelLog | None = None):
        self.script = script
        self.log = log if log is not None else ModelLog()

    def advise_params(self, payload: str) -> str:
        request = ModelRequest(kind="il_advise", payload=payload)
        try:
            response = self.script.respond(request)
        except ScriptExhaustedError as exc:
            raise AdvisorUnavailableError("advisor unavailable") from exc
        self.log.append(_entry_for(request, response))
        return response


class HashedBagEmbedder:
    """Deterministic mock embedder: tokens hashed into `dim` buckets, counts
    L2-normalized. Purely lexical; similarity is word overlap."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ModelClientError("embedder dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=float)
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            vec[0] = 1.0
            return vec
        for t in tokens:
            vec[self._bucket(t)] += 1.0
        return vec / float(np.linalg.norm(vec))


class HttpChatClient:
    """Minimal JSON-over-HTTP chat client (temperature pinned to 0).

    Without an explicit transport it uses the module default, which refuses
    to reach the network.
    """

    def __init__(self, endpoint: str, model: str, api_key: str = "",
                 transport=None, log: ModelLog | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.transport = transport if transport is not None else DEFAULT_TRANSPORT
        self.log = log if log is not None else ModelLog()

    def chat(self, request: ModelRequest) -> str:
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": request.payload}],
        }
        if self.api_key:
            body["api_key"] = self.api_key
        raw = self.transport(self.endpoint, body)
        try:
            response = raw["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ModelClientError(f"malformed chat response: {raw!r}") from exc
        self.log.append(_entry_for(request, response))
        return response


class HttpAdvisorClient(HttpChatClient):
    def advise_params(self, payload: str) -> str:
        try:
            return self.chat(ModelRequest(kind="il_advise", payload=payload))
        except ModelClientError as exc:
            raise AdvisorUnavailableError("advisor unavailable") from exc


class HttpEmbedder:
    def __init__(self, endpoint: str, model: str, api_key: str = "", transport=None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.transport = transport if transport is not None else DEFAULT_TRANSPORT

    def embed(self, text: str) -> np.ndarray:
        body = {"model": self.model, "input": text}
        if self.api_key:
            body["api_key"] = self.api_key
        raw = self.transport(self.endpoint, body)
        try:
            vec = np.asarray(raw["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError) as exc:
            raise ModelClientError(f"malformed embedding response: {raw!r}") from exc
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ModelClientError("embedding has zero norm")
        return vec / norm


@dataclass
class ClientBundle:
    """Everything the planning stack needs, sharing one episode log."""

    chat: object
    advisor: object
    embedder: object
    log: ModelLog = field(default_factory=ModelLog)


def build_mock_clients(
    llm_script: MockScript | None,
    advisor_script: MockScript | None,
    dim: int = 64,
) -> ClientBundle:
    log = ModelLog()
    chat = MockChatClient(llm_script or MockScript([]), log=log)
    advisor = MockAdvisorClient(advisor_script or MockScript([]), log=log)
    return ClientBundle(chat=chat, advisor=advisor, embedder=HashedBagEmbedder(dim=dim), log=log)


def build_http_clients(config: dict, transport=None) -> ClientBundle:
    """Live backend from an explicit config dict (endpoint/model/api_key per
    role). Only used when the CLI is invoked with the http backend."""
    log = ModelLog()
    chat_cfg = config.get("chat", {})
    adv_cfg = config.get("advisor", chat_cfg)
    emb_cfg = config.get("embedder", {})
    for name, cfg in (("chat", chat_cfg), ("embedder", emb_cfg)):
        if "endpoint" not in cfg or "model" not in cfg:
            raise ModelClientError(f"http backend config missing endpoint/model for {name}")
    chat = HttpChatClient(
        chat_cfg["endpoint"], chat_cfg["model"], chat_cfg.get("api_key", ""),
        transport=transport, log=log,
    )
    advisor = HttpAdvisorClient(
        adv_cfg["endpoint"], adv_cfg["model"], adv_cfg.get("api_key", ""),
        transport=transport, log=log,
    )
    embedder = HttpEmbedder(
        emb_cfg["endpoint"], emb_cfg["model"], emb_cfg.get("api_key", ""), transport=transport
    )
    return ClientBundle(chat=chat, advisor=advisor, embedder=embedder, log=log)
