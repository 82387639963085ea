# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Ordered record of every cross-domain message in a simulation.

Domain boundaries are the labels on each message. Anything bound for the
execute or data domain passes `ensure_untainted` before it is recorded, and
`leaked_handles` searches those messages byte for byte afterwards.
"""

import contextvars
import hashlib
import json
import logging
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

import httpx

from captoken.clock import Clock
from captoken.credd.models import ensure_untainted
from captoken.sim.models import Domain, JobState, Message, Phase

logger = logging.getLogger(__name__)

_UNTRUSTED = (Domain.EXECUTE, Domain.DATA)

# job on whose behalf the current task is talking, for messages recorded by HTTP hooks
_current_job: contextvars.ContextVar[str | None] = contextvars.ContextVar(
    "current_job", default=None
)


class Transcript:
    def __init__(self, clock: Clock):
        self.clock = clock
        self.messages: list[Message] = []
        self.jobs: dict[str, JobState] = {}
        # every refresh handle the server ever handed out
        self.issued_handles: set[str] = set()

    def record(
        self,
        source: Domain,
        destination: Domain,
        kind: str,
        payload: Any = "",
        job_id: str | None = None,
        phase: Phase | None = None,
    ) -> Message:
        """
        Append one message.

        Raises:
            TaintViolation: If a payload bound for execute or data holds a refresh handle
        """
        if destination in _UNTRUSTED:
            ensure_untainted(payload)
        if job_id is None:
            job_id = _current_job.get()
        body = payload if isinstance(payload, str) else json.dumps(payload, sort_keys=True)
        message = Message(
            seq=len(self.messages),
            at=self.clock.now(),
            source=source,
            destination=destination,
            kind=kind,
            job_id=job_id,
            phase=phase,
            body=body,
        )
        self.messages.append(message)
        if job_id is not None and job_id in self.jobs:
            self.jobs[job_id].transcript.append(message)
        return message

    @contextmanager
    def job_context(self, job_id: str) -> Iterator[None]:
        token = _current_job.set(job_id)
        try:
            yield
        finally:
            _current_job.reset(token)

    def http_hooks(self, source: Domain, destination: Domain) -> dict[str, list]:
        """httpx event hooks recording each request and response of a client."""

        async def on_request(request: httpx.Request) -> None:
            self.record(
                source,
                destination,
                f"{request.method} {request.url.path}",
                request.content.decode("utf-8", errors="replace"),
            )

        async def on_response(response: httpx.Response) -> None:
            await response.aread()
            self.record(
                destination,
                source,
                f"{response.status_code} {response.request.url.path}",
                response.text,
            )
            if response.request.url.path.endswith("/token") and response.is_success:
                handle = response.json().get("refresh_token")
                if handle:
                    self.issued_handles.add(handle)

        return {"request": [on_request], "response": [on_response]}

    def leaked_handles(self, handles: set[str] | None = None) -> list[Message]:
        """Messages bound for execute or data that contain any refresh handle."""
        handles = self.issued_handles | (handles or set())
        return [
            message
            for message in self.messages
            if message.destination in _UNTRUSTED
            and any(handle in message.body for handle in handles)
        ]

    def count(self, kind: str) -> int:
        return sum(1 for message in self.messages if message.kind == kind)

    def digest(self) -> str:
        canonical = json.dumps(
            [message.model_dump(mode="json") for message in self.messages],
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode()).hexdigest()
