"""Provider gateway: chat, embeddings, captions, and record/replay.

All pipeline stages talk to models through this one seam. Requests are
canonicalized and content-addressed so a recorded run can be replayed
byte-for-byte with zero network traffic; replay mode installs a transport
that fails loudly if anything tries to go online.

Wire format is OpenAI-compatible chat/embeddings endpoints. Secrets live
in environment variables and are never written to cassettes.
"""

from __future__ import annotations

import base64
import difflib
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass

import httpx

from deckgen.errors import ConfigInvalid, DeckgenError

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


class TransportError(DeckgenError):
    pass


class ProviderRejection(DeckgenError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned {status}: {body[:200]}")
        self.status = status
        self.body = body


class CassetteMiss(DeckgenError):
    def __init__(self, digest: str, hint: str):
        super().__init__(f"no cassette entry for {digest}{hint}")
        self.digest = digest


class DimensionMismatch(DeckgenError):
    pass


@dataclass
class ChatMessage:
    role: str
    text: str
    images: tuple[bytes, ...] = ()


@dataclass
class ChatRequest:
    model: str
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 4096

    def canonical(self) -> dict:
        return {
            "kind": "chat",
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [
                {
                    "role": m.role,
                    "text": m.text,
                    "images": [hashlib.sha256(b).hexdigest() for b in m.images],
                }
                for m in self.messages
            ],
        }


def request_digest(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """Content-addressed request/response store, one JSON file."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.entries: dict[str, dict] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            self.entries = doc.get("entries", {})

    def lookup(self, digest: str):
        entry = self.entries.get(digest)
        return entry["response"] if entry is not None else None

    def record(self, digest: str, canonical: dict, response, latency_ms: float) -> None:
        self.entries[digest] = {
            "request": canonical,
            "response": response,
            "latency_ms": round(latency_ms, 3),
        }
        if self.path:
            self.save()

    def save(self) -> None:
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump({"version": 1, "entries": self.entries}, fh, indent=1, sort_keys=True)

    def nearest_hint(self, canonical: dict) -> str:
        """Best-effort pointer at the closest recorded request."""
        if not self.entries:
            return "; cassette is empty"
        wanted = json.dumps(canonical, sort_keys=True)
        best, best_score = None, -1.0
        for digest, entry in self.entries.items():
            have = json.dumps(entry.get("request", {}), sort_keys=True)
            score = difflib.SequenceMatcher(None, wanted, have).ratio()
            if score > best_score:
                best, best_score = digest, score
        return f"; nearest recorded entry {best} (similarity {best_score:.2f})"


class HttpxTransport:
    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout

    def post(self, url: str, headers: dict, body: dict) -> tuple[int, str]:
        try:
            resp = httpx.post(url, headers=headers, json=body, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {url}: {exc}") from exc
        return resp.status_code, resp.text


class ForbiddenTransport:
    """Installed in replay mode; any use is a bug."""

    def post(self, url: str, headers: dict, body: dict):
        raise AssertionError(f"network access attempted in replay mode: POST {url}")


@dataclass
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    api_key_env: str | None = None
    dim: int | None = None  # expected embedding dimension, validated when set


class Gateway:
    """Role-routed provider client.

    Roles: "lm" (language model), "vm" (vision model), "embed". Each may
    point at a different endpoint; see EndpointConfig.
    """

    def __init__(
        self,
        endpoints: dict[str, EndpointConfig] | None = None,
        mode: str = "replay",
        cassette: Cassette | None = None,
        transport=None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        sleep=time.sleep,
    ):
        if mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "replay" and cassette is None:
            raise ConfigInvalid("replay mode requires a cassette")
        self.endpoints = endpoints or {}
        self.mode = mode
        self.cassette = cassette
        if transport is None:
            transport = ForbiddenTransport() if mode == "replay" else HttpxTransport()
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.telemetry = {
            "requests": 0,
            "retries": 0,
            "cassette_hits": 0,
            "cassette_misses": 0,
            "recorded": 0,
        }

    # -- mode plumbing ---------------------------------------------------

    def _dispatch(self, canonical: dict, live_call):
        digest = request_digest(canonical)
        if self.cassette is not None and self.mode in ("replay", "record"):
            hit = self.cassette.lookup(digest)
            if hit is not None:
                self.telemetry["cassette_hits"] += 1
                return hit
            if self.mode == "replay":
                self.telemetry["cassette_misses"] += 1
                raise CassetteMiss(digest, self.cassette.nearest_hint(canonical))
        started = time.monotonic()
        response = live_call()
        if self.mode == "record":
            latency = (time.monotonic() - started) * 1000.0
            self.cassette.record(digest, canonical, response, latency)
            self.telemetry["recorded"] += 1
        return response

    def _endpoint(self, role: str) -> EndpointConfig:
        ep = self.endpoints.get(role)
        if ep is None:
            raise ConfigInvalid(f"no endpoint configured for role {role!r}")
        return ep

    def _headers(self, ep: EndpointConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if ep.api_key_env:
            key = os.environ.get(ep.api_key_env)
            if not key:
                raise ConfigInvalid(
                    f"environment variable {ep.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_json(self, ep: EndpointConfig, path: str, body: dict) -> dict:
        url = ep.base_url.rstrip("/") + path
        headers = self._headers(ep)
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.telemetry["retries"] += 1
                self.sleep(self.backoff_base * (2 ** (attempt - 1)))
            self.telemetry["requests"] += 1
            try:
                status, text = self.transport.post(url, headers, body)
            except TransportError as exc:
                last_error = exc
                log.warning("transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if status == 200:
                try:
                    return json.loads(text)
                except json.JSONDecodeError as exc:
                    raise ProviderRejection(status, f"invalid JSON body: {text[:100]}") from exc
            if status == 429 or status >= 500:
                last_error = ProviderRejection(status, text)
                log.warning("retryable status %d (attempt %d)", status, attempt + 1)
                continue
            raise ProviderRejection(status, text)
        raise last_error if last_error is not None else TransportError("no attempts made")

    # -- public operations -------------------------------------------------

    def complete(self, req: ChatRequest, role: str = "lm") -> str:
        def live():
            ep = self._endpoint(role)
            messages = []
            for m in req.messages:
                if m.images:
                    content = [{"type": "text", "text": m.text}]
                    for img in m.images:
                        uri = "data:image/png;base64," + base64.b64encode(img).decode()
                        content.append({"type": "image_url", "image_url": {"url": uri}})
                    messages.append({"role": m.role, "content": content})
                else:
                    messages.append({"role": m.role, "content": m.text})
            body = {
                "model": ep.model or req.model,
                "messages": messages,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            }
            doc = self._post_json(ep, "/chat/completions", body)
            try:
                return doc["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ProviderRejection(200, f"unexpected chat payload: {doc}") from exc

        canonical = req.canonical()
        canonical["role"] = role
        return self._dispatch(canonical, live)

    def _embed(self, canonical: dict, inputs: list[str], role: str) -> list[list[float]]:
        def live():
            ep = self._endpoint(role)
            body = {"model": ep.model, "input": inputs}
            doc = self._post_json(ep, "/embeddings", body)
            try:
                data = sorted(doc["data"], key=lambda d: d["index"])
                return [d["embedding"] for d in data]
            except (KeyError, TypeError) as exc:
                raise ProviderRejection(200, f"unexpected embeddings payload: {doc}") from exc

        vectors = self._dispatch(canonical, live)
        if len(vectors) != len(inputs):
            raise ProviderRejection(200, f"expected {len(inputs)} vectors, got {len(vectors)}")
        want = self._endpoint(role).dim if role in self.endpoints else None
        if want is not None:
            for i, vec in enumerate(vectors):
                if len(vec) != want:
                    raise DimensionMismatch(
                        f"vector {i} has dimension {len(vec)}, configured {want}"
                    )
        return vectors

    def embed_text(self, texts: list[str], role: str = "embed") -> list[list[float]]:
        canonical = {
            "kind": "embed_text",
            "model": self._endpoint(role).model,
            "texts": list(texts),
            "role": role,
        }
        return self._embed(canonical, list(texts), role)

    def embed_image(self, images: list[bytes], role: str = "embed") -> list[list[float]]:
        canonical = {
            "kind": "embed_image",
            "model": self._endpoint(role).model,
            "images": [hashlib.sha256(b).hexdigest() for b in images],
            "role": role,
        }
        inputs = ["data:image/png;base64," + base64.b64encode(b).decode() for b in images]
        return self._embed(canonical, inputs, role)

    def caption_image(self, image: bytes, prompt: str, role: str = "vm") -> str:
        req = ChatRequest(
            model=self._endpoint(role).model,
            messages=[ChatMessage(role="user", text=prompt, images=(image,))],
        )
        return self.complete(req, role=role)
