"""HTTP client for models deployed behind a ``POST /predict`` endpoint.

Wire format::

    request  {"inputs":  [{feature: value, ...}, ...]}
    response {"outputs": [value, ...]}

Per-query seeds are never transmitted; evidence gathered from a remote model
is marked non-replayable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx

from ..errors import ProtocolError, TransportError
from .model import BlackBoxModel
from .schema import InputSchema, ModelInput, OutputSpace


@dataclass(frozen=True)
class EndpointDescriptor:
    url: str
    timeout_ms: int = 10_000
    max_batch_size: int = 64
    #: name of the environment variable holding a bearer token, if any
    token_env: str | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0 or self.max_batch_size <= 0:
            raise ValueError("timeout_ms and max_batch_size must be positive")

    @property
    def predict_url(self) -> str:
        url = self.url.rstrip("/")
        return url if url.endswith("/predict") else url + "/predict"


class RemoteModel(BlackBoxModel):
    stochastic = False
    replayable = False

    def __init__(self, endpoint: EndpointDescriptor, schema: InputSchema, output_space: OutputSpace,
                 *, stochastic: bool = False, cost_per_query: float = 1.0,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.schema = schema
        self.output_space = output_space
        self.stochastic = stochastic
        self.cost_per_query = cost_per_query
        headers = {"Content-Type": "application/json"}
        if endpoint.token_env:
            token = os.environ.get(endpoint.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            headers=headers, timeout=endpoint.timeout_ms / 1000.0, transport=transport
        )

    def descriptor(self) -> dict:
        return {"source": "remote", "url": self.endpoint.predict_url}

    def close(self) -> None:
        self._client.close()

    def _predict(self, inputs: Sequence[ModelInput], seeds: Sequence[int]) -> list[Any]:
        size = self.endpoint.max_batch_size
        outputs: list[Any] = []
        for start in range(0, len(inputs), size):
            outputs.extend(self._post(inputs[start:start + size]))
        return outputs

    def _post(self, chunk: Sequence[ModelInput]) -> list[Any]:
        body = {"inputs": [x.to_dict() for x in chunk]}
        try:
            resp = self._client.post(self.endpoint.predict_url, json=body)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout contacting {self.endpoint.predict_url}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"cannot reach {self.endpoint.predict_url}: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"{self.endpoint.predict_url} answered HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError("response body is not JSON") from exc
        if not isinstance(payload, Mapping) or not isinstance(payload.get("outputs"), list):
            raise ProtocolError('response must be an object with an "outputs" list')
        outputs = payload["outputs"]
        if len(outputs) != len(chunk):
            raise ProtocolError(f"sent {len(chunk)} inputs, received {len(outputs)} outputs")
        return outputs


def remote_model(endpoint: EndpointDescriptor, schema: InputSchema, output_space: OutputSpace,
                 **kw) -> RemoteModel:
    return RemoteModel(endpoint, schema, output_space, **kw)
