# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from enum import Enum

from pydantic import BaseModel, Field, model_validator

from captoken.core.scopes import Operation, Scope
from captoken.credd.models import CredentialKey

SIM_PROVIDER = "sim"


class Domain(str, Enum):
    """Trust domains a transcript message can leave or enter."""

    SUBMIT = "submit"
    SERVER = "server"
    EXECUTE = "execute"
    DATA = "data"


class Phase(str, Enum):
    STAGE_IN = "stage_in"
    EXECUTE = "execute"
    STAGE_OUT = "stage_out"

    @property
    def operation(self) -> Operation:
        return Operation.WRITE if self is Phase.STAGE_OUT else Operation.READ


class JobStatus(str, Enum):
    IDLE = "idle"
    STAGING_IN = "staging_in"
    RUNNING = "running"
    STAGING_OUT = "staging_out"
    COMPLETED = "completed"
    HELD = "held"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (JobStatus.COMPLETED, JobStatus.FAILED)


PHASE_STATUS = {
    Phase.STAGE_IN: JobStatus.STAGING_IN,
    Phase.EXECUTE: JobStatus.RUNNING,
    Phase.STAGE_OUT: JobStatus.STAGING_OUT,
}

_NEXT = {
    JobStatus.IDLE: JobStatus.STAGING_IN,
    JobStatus.STAGING_IN: JobStatus.RUNNING,
    JobStatus.RUNNING: JobStatus.STAGING_OUT,
    JobStatus.STAGING_OUT: JobStatus.COMPLETED,
}


def transition_allowed(current: JobStatus, new: JobStatus, held_from: JobStatus | None) -> bool:
    """Forward one step, hold from any live state, fail from any live state, resume a hold."""
    if current is JobStatus.HELD:
        return new is held_from or new is JobStatus.FAILED
    if current.terminal:
        return False
    return new in (_NEXT.get(current), JobStatus.HELD, JobStatus.FAILED)


class Message(BaseModel):
    """One recorded cross-domain message."""

    seq: int
    at: int
    source: Domain
    destination: Domain
    kind: str
    job_id: str | None = None
    phase: Phase | None = None
    body: str = ""


class JobEvent(BaseModel):
    at: int
    kind: str
    phase: Phase | None = None
    status: JobStatus | None = None
    reason: str | None = None


class JobSpec(BaseModel):
    """A job's declared data needs, one scope list per phase."""

    job_id: str = Field(min_length=1)
    user: str = Field(min_length=1)
    provider: str = SIM_PROVIDER
    handle_name: str = "default"
    stage_in_scopes: list[Scope] = Field(default_factory=list)
    execute_scopes: list[Scope] = Field(default_factory=list)
    stage_out_scopes: list[Scope] = Field(default_factory=list)
    audience: str | None = None
    restrict_origin: bool = False
    phase_durations: tuple[int, int, int] = (60, 300, 60)

    @model_validator(mode="after")
    def _check_phases(self) -> "JobSpec":
        if any(duration < 0 for duration in self.phase_durations):
            raise ValueError("phase durations must not be negative")
        for phase in Phase:
            for scope in self.scopes_for(phase):
                if scope.operation is not phase.operation:
                    raise ValueError(f"{phase.value} scope {scope} must be {phase.operation.value}")
        return self

    def scopes_for(self, phase: Phase) -> list[Scope]:
        match phase:
            case Phase.STAGE_IN:
                return self.stage_in_scopes
            case Phase.EXECUTE:
                return self.execute_scopes
            case Phase.STAGE_OUT:
                return self.stage_out_scopes

    def duration_of(self, phase: Phase) -> int:
        return self.phase_durations[list(Phase).index(phase)]

    def all_scopes(self) -> list[Scope]:
        return [*self.stage_in_scopes, *self.execute_scopes, *self.stage_out_scopes]

    def credential_key(self) -> CredentialKey:
        return CredentialKey(user=self.user, provider=self.provider, handle_name=self.handle_name)


class JobState(BaseModel):
    job_id: str
    status: JobStatus = JobStatus.IDLE
    reason: str | None = None
    held_from: JobStatus | None = None
    # the phase a runtime hold interrupted; None for holds taken at submission
    held_phase: Phase | None = None
    assigned_node: str | None = None
    transcript: list[Message] = Field(default_factory=list)
    events: list[JobEvent] = Field(default_factory=list)

    def tokens_in(self, phase: Phase) -> list[str]:
        """Distinct access tokens delivered to the job for one phase, in order."""
        tokens: list[str] = []
        for message in self.transcript:
            if message.kind == "token_delivery" and message.phase is phase:
                if message.body not in tokens:
                    tokens.append(message.body)
        return tokens

    def phase_started_at(self, phase: Phase) -> int | None:
        starts = [e.at for e in self.events if e.kind == "phase_start" and e.phase is phase]
        return starts[0] if starts else None
