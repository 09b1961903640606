"""Backend protocol and the HTTP chat-completions client."""

from __future__ import annotations

import json
import os
from typing import Protocol

import httpx

from ..evidence import EvidencePack
from ..triage import TriageResult

DEFAULT_TIMEOUT_S = 120.0
API_KEY_ENV = "DETECTIVE_API_KEY"


class BackendUnreachable(RuntimeError):
    """Transport-level failure talking to a remote backend."""


class DetectiveBackend(Protocol):
    name: str

    def complete(self, messages: list[dict], pack: EvidencePack, triage: TriageResult) -> str:
        """Return the raw reply to the conversation so far."""


class RemoteChatBackend:
    """POSTs the conversation to an OpenAI-compatible ``/chat/completions`` endpoint.

    Only ``messages`` go on the wire. ``last_exchange`` keeps the raw request
    and response bodies of the most recent call for the audit log.
    """

    name = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        api_key: str | None = None,
        api_key_env: str = API_KEY_ENV,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout_s = timeout_s
        self._api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self._transport = transport
        self.last_exchange: dict | None = None

    def complete(self, messages: list[dict], pack: EvidencePack, triage: TriageResult) -> str:
        body = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        request_body = json.dumps(body)
        self.last_exchange = {"url": f"{self.base_url}/chat/completions", "request_body": request_body}
        try:
            with httpx.Client(timeout=self.timeout_s, transport=self._transport) as client:
                resp = client.post(f"{self.base_url}/chat/completions", content=request_body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendUnreachable(f"{type(exc).__name__}: {exc}") from exc
        self.last_exchange.update(status=resp.status_code, response_body=resp.text)
        if resp.status_code >= 400:
            raise BackendUnreachable(f"HTTP {resp.status_code} from {self.base_url}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnreachable(f"malformed chat-completions response: {exc!r}") from exc
        return content if isinstance(content, str) else json.dumps(content)
