# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Batch-system roles of the simulation.

`Schedd` accepts jobs and acquires credentials for them in the submit domain.
For each running job a `Shadow` (submit side) relays access tokens from the
credential daemon to a `Starter` (execute side), which runs the job's three
phases against the data gateway. Only access tokens ever cross to the starter.
"""

import asyncio
import itertools
import logging
from collections import defaultdict
from urllib.parse import quote

from captoken.core.scopes import Scope, covered, dedupe
from captoken.core.tokens import decode_unverified
from captoken.credd.models import CredentialKey, DepositFile
from captoken.credd.rendezvous import deposit
from captoken.errors import (
    AccessDenied,
    CaptokenError,
    JobStateError,
    NoScopesApproved,
    NotHeld,
    ObjectNotFound,
    UnknownJob,
    VerificationError,
    raise_for_reason,
)
from captoken.gateway.config import REASON_HEADER
from captoken.sim.deployment import Deployment
from captoken.sim.models import (
    PHASE_STATUS,
    Domain,
    JobEvent,
    JobSpec,
    JobState,
    JobStatus,
    Phase,
    transition_allowed,
)

logger = logging.getLogger(__name__)


class Shadow:
    """Submit-side relay between one job's starter and the credential daemon."""

    def __init__(self, deployment: Deployment, spec: JobSpec, state: JobState):
        self.deployment = deployment
        self.spec = spec
        self.state = state

    @property
    def key(self) -> CredentialKey:
        return self.spec.credential_key()

    async def phase_token(self, phase: Phase, min_remaining: int = 1) -> str:
        """
        Fetch the access token for one phase and deliver it to the starter.

        Raises:
            CaptokenError: Whatever the credential daemon raised, e.g. Revoked
        """
        transcript = self.deployment.transcript
        scopes = self.spec.scopes_for(phase)
        transcript.record(
            Domain.EXECUTE,
            Domain.SUBMIT,
            "token_request",
            {"scopes": [str(s) for s in scopes], "min_remaining": min_remaining},
            job_id=self.spec.job_id,
            phase=phase,
        )
        origin = self.state.assigned_node if self.spec.restrict_origin else None
        token = await self.deployment.credd.get_access(
            self.key,
            scopes,
            self.spec.audience or self.deployment.settings.audience,
            origin,
            min_remaining,
        )
        transcript.record(
            Domain.SUBMIT,
            Domain.EXECUTE,
            "token_delivery",
            token,
            job_id=self.spec.job_id,
            phase=phase,
        )
        return token


class Starter:
    """Execute-side runner of one job's phases."""

    def __init__(self, deployment: Deployment, spec: JobSpec, state: JobState, shadow: Shadow):
        self.deployment = deployment
        self.spec = spec
        self.state = state
        self.shadow = shadow

    async def _gateway_call(
        self, phase: Phase, scope: Scope, token: str, origin: str | None, kind: str
    ) -> None:
        transcript = self.deployment.transcript
        header = self.deployment.gateway.config.local_origin_header
        headers = {"Authorization": f"Bearer {token}"}
        if origin is not None:
            headers[header] = origin

        method = "PUT" if phase is Phase.STAGE_OUT else "GET"
        transcript.record(
            Domain.EXECUTE,
            Domain.DATA,
            kind,
            {"method": method, "path": scope.path, "origin": origin, "authorization": token},
            job_id=self.spec.job_id,
            phase=phase,
        )
        response = await self.deployment.gateway_http.request(
            method,
            quote(scope.path),
            headers=headers,
            content=f"{self.spec.job_id}:{scope.path}\n".encode() if method == "PUT" else None,
        )
        reason = response.headers.get(REASON_HEADER)
        transcript.record(
            Domain.DATA,
            Domain.EXECUTE,
            f"{response.status_code} {scope.path}",
            {"status": response.status_code, "reason": reason},
            job_id=self.spec.job_id,
            phase=phase,
        )

        if response.status_code == 403:
            raise AccessDenied(reason or "Forbidden", f"{method} {scope.path}")
        if response.is_error:
            raise_for_reason(reason or "CaptokenError", f"{method} {scope.path}")

    async def _perform(self, phase: Phase, token: str) -> str:
        """One gateway operation per scope; a 401 gets one fresh token and one retry."""
        node = self.state.assigned_node
        for scope in self.spec.scopes_for(phase):
            try:
                await self._gateway_call(phase, scope, token, node, "gateway_op")
            except VerificationError as e:
                _, payload = decode_unverified(token)
                remaining = int(payload["exp"]) - self.deployment.clock.now()
                logger.info(
                    "Gateway refused token, refreshing once",
                    extra={"job_id": self.spec.job_id, "error": e.reason},
                )
                token = await self.shadow.phase_token(phase, min_remaining=max(remaining, 0) + 1)
                await self._gateway_call(phase, scope, token, node, "gateway_op")
        if phase is Phase.EXECUTE and self.spec.restrict_origin:
            await self._replay_check(token)
        return token

    async def _replay_check(self, token: str) -> None:
        """Present the token from another node; the gateway must refuse it."""
        scope = self.spec.execute_scopes[0]
        reason: str | None = None
        try:
            await self._gateway_call(
                Phase.EXECUTE, scope, token, f"{self.state.assigned_node}-replay", "replay_check"
            )
        except CaptokenError as e:
            reason = e.reason
        self.state.events.append(
            JobEvent(
                at=self.deployment.clock.now(),
                kind="replay_check",
                phase=Phase.EXECUTE,
                reason=reason,
            )
        )

    async def run_phase(self, phase: Phase) -> None:
        """
        Run one phase for its full duration, renewing the token before it runs out.

        Raises:
            CaptokenError: The failure that should hold or fail the job
        """
        clock = self.deployment.clock
        phase_end = clock.now() + self.spec.duration_of(phase)
        if not self.spec.scopes_for(phase):
            await clock.sleep(phase_end - clock.now())
            return

        token = await self._perform(phase, await self.shadow.phase_token(phase))
        while (now := clock.now()) < phase_end:
            _, payload = decode_unverified(token)
            issued_at, expires_at = int(payload["iat"]), int(payload["exp"])
            lead = max(1, (expires_at - issued_at) // 5)
            renew_at = expires_at - lead
            if renew_at >= phase_end:
                await clock.sleep(phase_end - now)
                break
            await clock.sleep(max(renew_at - now, 1))
            token = await self._perform(phase, await self.shadow.phase_token(phase, lead + 1))


class Schedd:
    """
    Job queue of the submit domain.

    Args:
        deployment: The services the jobs run against
        users: user -> identity attributes presented at consent
    """

    def __init__(self, deployment: Deployment, users: dict[str, dict[str, str]]):
        self.deployment = deployment
        self.users = users
        self.specs: dict[str, JobSpec] = {}
        self.jobs: dict[str, JobState] = {}
        self._nodes = itertools.cycle(deployment.settings.execute_nodes)
        # one consent round at a time per credential
        self._acquiring: defaultdict[CredentialKey, asyncio.Lock] = defaultdict(asyncio.Lock)

    def _job(self, job_id: str) -> tuple[JobSpec, JobState]:
        if job_id not in self.jobs:
            raise UnknownJob(f"no job {job_id!r}")
        return self.specs[job_id], self.jobs[job_id]

    def _event(self, state: JobState, kind: str, **fields) -> None:
        state.events.append(JobEvent(at=self.deployment.clock.now(), kind=kind, **fields))

    def _transition(self, state: JobState, status: JobStatus, reason: str | None = None) -> None:
        if not transition_allowed(state.status, status, state.held_from):
            raise JobStateError(f"{state.job_id}: {state.status.value} -> {status.value}")
        state.status = status
        state.reason = reason
        self._event(state, "status", status=status, reason=reason)

    def _hold(self, state: JobState, error: CaptokenError, phase: Phase | None) -> None:
        self._event(state, "step_failed", phase=phase, reason=error.reason)
        held_from = state.status
        self._transition(state, JobStatus.HELD, error.reason)
        state.held_from = held_from
        state.held_phase = phase
        logger.info(
            "Job held",
            extra={"job_id": state.job_id, "reason": error.reason, "from": held_from.value},
        )

    # credentials

    def _covered(self, spec: JobSpec) -> bool:
        credential = self.deployment.credd.store.get(spec.credential_key())
        if credential is None:
            return False
        return all(covered(scope, credential.granted_scopes) for scope in spec.all_scopes())

    async def acquire(self, key: CredentialKey, scopes: list[Scope]) -> None:
        """
        Run consent, rendezvous deposit and pickup for one credential.

        Raises:
            CaptokenError: Consent refusal, or the reason the deposit was quarantined
        """
        deployment = self.deployment
        provider = deployment.provider
        assert provider.client_id is not None

        grant = await deployment.schedd_issuer.authorize(
            key.user, self.users.get(key.user, {}), provider.client_id, dedupe(scopes)
        )
        deposit(
            deployment.rendezvous_dir,
            DepositFile(
                user=key.user,
                provider=key.provider,
                handle_name=key.handle_name,
                code=grant.code,
                client_id=provider.client_id,
            ),
        )
        deployment.transcript.record(
            Domain.SUBMIT,
            Domain.SUBMIT,
            "deposit",
            {"user": key.user, "handle_name": key.handle_name},
        )

        quarantined = len(deployment.credd.quarantined)
        await deployment.credd.rendezvous_pickup(deployment.rendezvous_dir)
        failures = deployment.credd.quarantined[quarantined:]
        if failures:
            raise_for_reason(failures[0].reason, failures[0].detail)

    # operations

    async def submit_job(self, spec: JobSpec) -> str:
        """
        Accept a job; acquire its credential when the store has none.

        Failures do not raise: the job is held with the failure's reason.

        Raises:
            JobStateError: If the job id is already taken
        """
        if spec.job_id in self.jobs:
            raise JobStateError(f"job {spec.job_id!r} already submitted")
        state = JobState(job_id=spec.job_id)
        self.specs[spec.job_id] = spec
        self.jobs[spec.job_id] = state
        self.deployment.transcript.jobs[spec.job_id] = state
        self._event(state, "submitted", status=JobStatus.IDLE)

        with self.deployment.transcript.job_context(spec.job_id):
            await self._acquire_for(spec, state, fresh=False)
        return spec.job_id

    async def _acquire_for(self, spec: JobSpec, state: JobState, fresh: bool) -> None:
        key = spec.credential_key()
        try:
            async with self._acquiring[key]:
                if fresh or not self._covered(spec):
                    existing = self.deployment.credd.store.get(key)
                    earlier = existing.granted_scopes if existing else []
                    await self.acquire(key, [*earlier, *spec.all_scopes()])
            if not self._covered(spec):
                raise NoScopesApproved("credential does not cover every phase of the job")
        except CaptokenError as e:
            self._hold(state, e, None)

    async def run_job(self, job_id: str) -> JobState:
        """
        Run an idle job through stage-in, execute and stage-out.

        Raises:
            UnknownJob: If no such job was submitted
            JobStateError: If the job is not idle
        """
        spec, state = self._job(job_id)
        if state.status is not JobStatus.IDLE:
            raise JobStateError(f"job {job_id!r} is {state.status.value}, not idle")
        if state.assigned_node is None:
            state.assigned_node = next(self._nodes)
            self._event(state, "matched", reason=state.assigned_node)
        return await self._run_from(spec, state, Phase.STAGE_IN)

    async def _run_from(self, spec: JobSpec, state: JobState, first: Phase) -> JobState:
        shadow = Shadow(self.deployment, spec, state)
        starter = Starter(self.deployment, spec, state, shadow)
        phases = list(Phase)

        with self.deployment.transcript.job_context(spec.job_id):
            for phase in phases[phases.index(first) :]:
                if state.status is not PHASE_STATUS[phase]:
                    self._transition(state, PHASE_STATUS[phase])
                self._event(state, "phase_start", phase=phase)
                try:
                    await starter.run_phase(phase)
                except ObjectNotFound as e:
                    self._event(state, "step_failed", phase=phase, reason=e.reason)
                    self._transition(state, JobStatus.FAILED, e.reason)
                    return state
                except CaptokenError as e:
                    self._hold(state, e, phase)
                    return state

        self._transition(state, JobStatus.COMPLETED)
        logger.info("Job completed", extra={"job_id": state.job_id, "node": state.assigned_node})
        return state

    async def release_job(self, job_id: str) -> JobState:
        """
        Release a held job: back to where it was, retrying the failed step once.

        Raises:
            UnknownJob: If no such job was submitted
            NotHeld: If the job is not held
        """
        spec, state = self._job(job_id)
        if state.status is not JobStatus.HELD:
            raise NotHeld(f"job {job_id!r} is {state.status.value}")
        assert state.held_from is not None

        self._event(state, "released", reason=state.reason)
        phase = state.held_phase
        self._transition(state, state.held_from)
        state.held_from = None
        state.held_phase = None

        if phase is None:
            with self.deployment.transcript.job_context(spec.job_id):
                await self._acquire_for(spec, state, fresh=True)
            return state
        return await self._run_from(spec, state, phase)
