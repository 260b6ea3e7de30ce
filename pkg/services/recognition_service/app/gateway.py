"""LLM gateway: HTTP exchange with record/replay fixtures.

Modes:
- live: POST the prompt to the configured endpoint and return the response text
- record: live, then persist an ExchangeRecord keyed by the request digest
- replay: return the recorded response; no network access

Provider payload/response shapes live in adapters so the endpoint is not
tied to one vendor. Video attachments are passed by reference only.
"""
import hashlib
import json
import logging
import os
import threading
import time
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import httpx
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.shared.errors import (
    ConfigError,
    EndpointUnreachable,
    FixtureMissing,
    MalformedResponse,
)
from services.shared.observability import LLM_EXCHANGES

logger = logging.getLogger(__name__)


class GatewayMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class GatewaySettings(BaseSettings):
    """Endpoint configuration from ES_LLM_* environment variables or .env.

    The credential is never stored here; ``api_key_env`` names the variable
    that holds it.
    """

    model_config = SettingsConfigDict(env_prefix="ES_LLM_", env_file=".env", extra="ignore")

    endpoint_url: Optional[str] = None
    endpoint_id: str = "default"
    model: str = "video-llm"
    provider: str = "generic"
    timeout_s: float = Field(120.0, gt=0)
    mode: GatewayMode = GatewayMode.REPLAY
    fixture_dir: Path = Path("fixtures/llm")
    api_key_env: str = "ES_LLM_API_KEY"

    failure_threshold: int = Field(3, ge=1)
    breaker_timeout_s: float = Field(30.0, ge=0)


class ProviderAdapter:
    """Maps (model, prompt, attachment) to a request body and back to text."""

    name = "generic"

    def build_payload(self, model: str, prompt: str, attachment: Optional[str]) -> Dict[str, Any]:
        return {"model": model, "prompt": prompt, "attachment": attachment}

    def extract_text(self, document: Any) -> str:
        return document["text"]


class ChatCompletionAdapter(ProviderAdapter):
    """Chat-completion shaped endpoints (``choices[0].message.content``)."""

    name = "chat"

    def build_payload(self, model: str, prompt: str, attachment: Optional[str]) -> Dict[str, Any]:
        content: list = [{"type": "text", "text": prompt}]
        if attachment:
            content.append({"type": "video_url", "video_url": {"url": attachment}})
        return {"model": model, "messages": [{"role": "user", "content": content}]}

    def extract_text(self, document: Any) -> str:
        return document["choices"][0]["message"]["content"]


ADAPTERS: Dict[str, ProviderAdapter] = {
    adapter.name: adapter for adapter in (ProviderAdapter(), ChatCompletionAdapter())
}


def get_adapter(name: str) -> ProviderAdapter:
    try:
        return ADAPTERS[name]
    except KeyError as e:
        raise ConfigError(f"Unknown provider adapter: {name!r}", detail=", ".join(ADAPTERS)) from e


def request_digest(model: str, prompt: str, attachment: Optional[str]) -> str:
    """sha256 of the canonical JSON request; keys replay lookup."""
    canonical = json.dumps(
        {"model": model, "prompt": prompt, "attachment": attachment},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ExchangeRecord(BaseModel):
    digest: str
    prompt_id: str
    model: str
    attachment: Optional[str] = None
    response_text: str
    recorded_at: str
    endpoint_id: str


class FixtureStore:
    """Directory of ``<digest>.json`` exchange records."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def load(self, digest: str) -> ExchangeRecord:
        path = self.path_for(digest)
        if not path.exists():
            raise FixtureMissing(f"No recorded exchange for digest {digest}", context=str(path))
        try:
            return ExchangeRecord.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise MalformedResponse(f"Corrupt fixture {path.name}", detail=str(e)) from e

    def save(self, record: ExchangeRecord) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.path_for(record.digest)
        path.write_text(
            json.dumps(record.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False)
            + "\n",
            encoding="utf-8",
        )
        return path


class CircuitBreaker:
    """Circuit breaker for the LLM endpoint.

    States:
    - CLOSED: Normal operation, requests pass through
    - OPEN: Too many failures, requests fail fast
    - HALF_OPEN: One trial request after the timeout
    """

    def __init__(
        self,
        failure_threshold: int = 3,
        timeout: float = 30.0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.failure_threshold = failure_threshold
        self.timeout = timeout
        self.clock = clock

        self.failure_count = 0
        self.state = "CLOSED"  # CLOSED, OPEN, HALF_OPEN
        self.last_failure_time: Optional[float] = None

    def call(self, func, *args, **kwargs):
        """Execute function with circuit breaker protection."""
        if self.state == "OPEN":
            if self.clock() - self.last_failure_time >= self.timeout:
                logger.info("Circuit breaker: OPEN → HALF_OPEN (timeout elapsed)")
                self.state = "HALF_OPEN"
            else:
                raise EndpointUnreachable("Circuit breaker is OPEN; endpoint marked unreachable")

        try:
            result = func(*args, **kwargs)
        except EndpointUnreachable:
            self._on_failure()
            raise
        self._on_success()
        return result

    def _on_success(self):
        if self.state == "HALF_OPEN":
            logger.info("Circuit breaker: HALF_OPEN → CLOSED (recovered)")
        self.state = "CLOSED"
        self.failure_count = 0

    def _on_failure(self):
        self.failure_count += 1
        self.last_failure_time = self.clock()

        if self.state == "HALF_OPEN":
            logger.warning("Circuit breaker: HALF_OPEN → OPEN (failure during test)")
            self.state = "OPEN"
        elif self.failure_count >= self.failure_threshold:
            logger.error(f"Circuit breaker: CLOSED → OPEN ({self.failure_count} failures)")
            self.state = "OPEN"


class LLMGateway:
    """Sends prompts to one endpoint, one request in flight at a time.

    Args:
        settings: Endpoint configuration
        transport: Optional httpx transport (tests inject ``httpx.MockTransport``)
        store: Fixture store; defaults to ``settings.fixture_dir``
    """

    def __init__(
        self,
        settings: Optional[GatewaySettings] = None,
        transport: Optional[httpx.BaseTransport] = None,
        store: Optional[FixtureStore] = None,
    ):
        self.settings = settings or GatewaySettings()
        self.adapter = get_adapter(self.settings.provider)
        self.store = store or FixtureStore(self.settings.fixture_dir)
        self.breaker = CircuitBreaker(
            failure_threshold=self.settings.failure_threshold,
            timeout=self.settings.breaker_timeout_s,
        )
        self._transport = transport
        self._client: Optional[httpx.Client] = None
        self._lock = threading.Lock()

    def __enter__(self) -> "LLMGateway":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def _http_client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(transport=self._transport, timeout=self.settings.timeout_s)
        return self._client

    def _credential(self) -> str:
        if not self.settings.endpoint_url:
            raise ConfigError("Live and record modes need ES_LLM_ENDPOINT_URL")
        key = os.environ.get(self.settings.api_key_env)
        if not key:
            raise ConfigError(
                f"Credential variable {self.settings.api_key_env} is not set",
                detail="credentials are read from the environment only",
            )
        return key

    def _post(self, payload: Dict[str, Any], key: str) -> httpx.Response:
        try:
            response = self._http_client().post(
                self.settings.endpoint_url,
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
            )
        except httpx.HTTPError as e:
            raise EndpointUnreachable(
                f"Request to {self.settings.endpoint_id} failed: {e}",
                context=self.settings.endpoint_url,
            ) from e
        if not response.is_success:
            raise EndpointUnreachable(
                f"Endpoint {self.settings.endpoint_id} returned HTTP {response.status_code}",
                detail=response.text[:500],
                context=self.settings.endpoint_url,
            )
        return response

    def _exchange(self, prompt: str, attachment: Optional[str]) -> str:
        key = self._credential()
        payload = self.adapter.build_payload(self.settings.model, prompt, attachment)
        response = self.breaker.call(self._post, payload, key)
        try:
            text = self.adapter.extract_text(response.json())
        except ValueError as e:
            raise MalformedResponse("Endpoint response is not JSON", detail=response.text[:500]) from e
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(
                f"Endpoint response lacks the {self.adapter.name} text field", detail=str(e)
            ) from e
        if not isinstance(text, str):
            raise MalformedResponse(f"Response text is {type(text).__name__}, expected str")
        return text

    def send(
        self,
        prompt: str,
        attachment: Optional[str] = None,
        prompt_id: str = "custom",
        mode: Optional[GatewayMode] = None,
    ) -> str:
        """Exchange one prompt and return the response text.

        Raises:
            FixtureMissing: replay with no recorded exchange for this request
            EndpointUnreachable: transport failure, non-2xx status or open breaker
            MalformedResponse: body is not JSON or lacks the text field
            ConfigError: live/record without endpoint URL or credential
        """
        mode = GatewayMode(mode or self.settings.mode)
        digest = request_digest(self.settings.model, prompt, attachment)
        with self._lock:
            if mode == GatewayMode.REPLAY:
                text = self.store.load(digest).response_text
                logger.info(f"Replayed exchange {digest[:12]} for prompt {prompt_id}")
            else:
                logger.info(f"Sending prompt {prompt_id} to {self.settings.endpoint_id} ({mode.value})")
                text = self._exchange(prompt, attachment)
                if mode == GatewayMode.RECORD:
                    path = self.store.save(
                        ExchangeRecord(
                            digest=digest,
                            prompt_id=prompt_id,
                            model=self.settings.model,
                            attachment=attachment,
                            response_text=text,
                            recorded_at=datetime.now(timezone.utc).isoformat(),
                            endpoint_id=self.settings.endpoint_id,
                        )
                    )
                    logger.info(f"Recorded exchange {digest[:12]} to {path}")
        LLM_EXCHANGES.labels(mode=mode.value, prompt_id=prompt_id).inc()
        return text
