# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Declarative end-to-end scenarios.

A scenario file (TOML) names the services' settings, the issuer policy, the
users' identity attributes, fixture files, credentials to seed, jobs with their
expected outcome, and timed faults. `run_scenario` boots a deployment on a
virtual clock, plays the file and returns a report with the final job states
and the result of every invariant check.
"""

import asyncio
import logging
import tempfile
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError, model_validator

from captoken.clock import VirtualClock
from captoken.core.scopes import Scope
from captoken.core.tokens import decode_unverified
from captoken.config import read_toml
from captoken.credd.models import CredentialKey
from captoken.errors import CaptokenError, ConfigError, MalformedScope, ScenarioParseError
from captoken.server.models import PolicyRule
from captoken.sim.deployment import Deployment, ServiceSettings, Transport
from captoken.sim.models import SIM_PROVIDER, JobSpec, JobState, JobStatus, Phase
from captoken.sim.schedd import Schedd

logger = logging.getLogger(__name__)

BUNDLED_SCENARIOS = Path(__file__).parent / "scenarios"


class FaultKind(str, Enum):
    REVOKE = "revoke"
    EXPIRE_KEYS = "expire_keys"
    RESTART_CREDD = "restart_credd"
    FIX_POLICY = "fix_policy"
    RELEASE = "release"


class Fault(BaseModel):
    """One fault injected at `at` seconds after the scenario starts."""

    at: int = Field(ge=0)
    kind: FaultKind
    user: str | None = None
    provider: str = SIM_PROVIDER
    handle_name: str = "default"
    job_id: str | None = None
    rule: PolicyRule | None = None

    @model_validator(mode="after")
    def _check_arguments(self) -> "Fault":
        match self.kind:
            case FaultKind.REVOKE if self.user is None:
                raise ValueError("revoke needs user")
            case FaultKind.FIX_POLICY if self.rule is None:
                raise ValueError("fix_policy needs rule")
            case FaultKind.RELEASE if self.job_id is None:
                raise ValueError("release needs job_id")
        return self


class Expectation(BaseModel):
    status: JobStatus = JobStatus.COMPLETED
    reason: str | None = None
    min_execute_tokens: int = Field(default=0, ge=0)


class JobEntry(JobSpec):
    submit_at: int = Field(default=0, ge=0)
    expect: Expectation = Field(default_factory=Expectation)

    def spec(self) -> JobSpec:
        return JobSpec.model_validate(self.model_dump(exclude={"submit_at", "expect"}))


class CredentialSeed(BaseModel):
    user: str
    provider: str = SIM_PROVIDER
    handle_name: str = "default"
    scopes: list[Scope] = Field(min_length=1)

    def key(self) -> CredentialKey:
        return CredentialKey(user=self.user, provider=self.provider, handle_name=self.handle_name)


class ScenarioFile(BaseModel):
    name: str
    description: str = ""
    seed: int = 0
    start_time: int = 1_700_000_000
    services: ServiceSettings = Field(default_factory=ServiceSettings)
    policy: list[PolicyRule] = Field(default_factory=list)
    users: dict[str, dict[str, str]] = Field(default_factory=dict)
    files: dict[str, str] = Field(default_factory=dict)
    credentials: list[CredentialSeed] = Field(default_factory=list)
    jobs: list[JobEntry] = Field(min_length=1)
    faults: list[Fault] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_references(self) -> "ScenarioFile":
        job_ids = [job.job_id for job in self.jobs]
        if len(set(job_ids)) != len(job_ids):
            raise ValueError("job ids must be unique")
        for fault in self.faults:
            if fault.kind is FaultKind.RELEASE and fault.job_id not in job_ids:
                raise ValueError(f"release names unknown job {fault.job_id!r}")
        return self


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class FaultOutcome(BaseModel):
    at: int
    kind: FaultKind
    outcome: str


class JobReport(BaseModel):
    job_id: str
    status: JobStatus
    reason: str | None
    assigned_node: str | None
    tokens: dict[Phase, int]
    expected: Expectation
    met: bool


class ScenarioReport(BaseModel):
    scenario: str
    passed: bool
    jobs: list[JobReport]
    checks: list[CheckResult]
    faults: list[FaultOutcome]
    transcript_digest: str
    transcript_messages: int
    credd_restarts: int


def load_scenario(path: Path) -> ScenarioFile:
    """
    Parse a scenario file.

    Raises:
        ScenarioParseError: If the file is unreadable, not TOML, or invalid
    """
    try:
        return ScenarioFile.model_validate(read_toml(Path(path)))
    except ConfigError as e:
        raise ScenarioParseError(str(e)) from e
    except (ValidationError, MalformedScope) as e:
        raise ScenarioParseError(f"invalid scenario {path}: {e}") from e


def bundled_scenario(name: str) -> Path:
    return BUNDLED_SCENARIOS / f"{name.removesuffix('.toml')}.toml"


async def apply_fault(fault: Fault, deployment: Deployment, schedd: Schedd) -> str:
    """Apply one fault and describe what happened."""
    match fault.kind:
        case FaultKind.REVOKE:
            assert fault.user is not None
            key = CredentialKey(
                user=fault.user, provider=fault.provider, handle_name=fault.handle_name
            )
            return "revoked" if await deployment.revoke(key) else "no credential"
        case FaultKind.EXPIRE_KEYS:
            return f"active key {await deployment.expire_keys()}"
        case FaultKind.RESTART_CREDD:
            return f"replayed {deployment.restart_credd()}"
        case FaultKind.FIX_POLICY:
            assert fault.rule is not None
            deployment.server.policy.append(fault.rule)
            return "rule added"
        case FaultKind.RELEASE:
            assert fault.job_id is not None
            state = await schedd.release_job(fault.job_id)
            if state.status is JobStatus.IDLE:
                state = await schedd.run_job(fault.job_id)
            return f"{state.status.value}" + (f"({state.reason})" if state.reason else "")


def _check_containment(deployment: Deployment) -> CheckResult:
    leaked = deployment.transcript.leaked_handles(set(deployment.credd.refresh_handles()))
    return CheckResult(
        name="containment",
        passed=not leaked,
        detail=", ".join(f"#{m.seq} {m.kind}" for m in leaked),
    )


def _check_phase_gating(jobs: list[JobState]) -> CheckResult:
    early: list[str] = []
    for state in jobs:
        started = state.phase_started_at(Phase.STAGE_OUT)
        for token in state.tokens_in(Phase.STAGE_OUT):
            _, payload = decode_unverified(token)
            if started is None or int(payload["iat"]) < started:
                early.append(f"{state.job_id}:{payload['jti']}")
    return CheckResult(name="phase_gating", passed=not early, detail=", ".join(early))


def _check_origin_binding(jobs: list[JobState]) -> CheckResult:
    replays = [
        (state.job_id, event.reason)
        for state in jobs
        for event in state.events
        if event.kind == "replay_check"
    ]
    accepted = [f"{job_id}:{reason}" for job_id, reason in replays if reason != "OriginMismatch"]
    return CheckResult(
        name="origin_binding",
        passed=not accepted,
        detail=f"{len(replays)} replays"
        + (f", not refused: {', '.join(accepted)}" if accepted else ""),
    )


def _check_holds(jobs: list[JobState]) -> CheckResult:
    wrong: list[str] = []
    for state in jobs:
        failure: str | None = None
        for event in state.events:
            if event.kind == "step_failed":
                failure = event.reason
            elif event.kind == "status" and event.status is JobStatus.HELD:
                if event.reason is None or event.reason != failure:
                    wrong.append(f"{state.job_id}:{event.reason}!={failure}")
    return CheckResult(name="hold_correctness", passed=not wrong, detail=", ".join(wrong))


def _check_attenuation(deployment: Deployment) -> CheckResult:
    escalations = deployment.server.audit_attenuation()
    return CheckResult(
        name="attenuation",
        passed=not escalations,
        detail=f"{len(deployment.server.store.audit)} minted, {len(escalations)} escalated",
    )


def _job_report(entry: JobEntry, state: JobState) -> JobReport:
    tokens = {phase: len(state.tokens_in(phase)) for phase in Phase}
    expected = entry.expect
    met = (
        state.status is expected.status
        and (expected.reason is None or state.reason == expected.reason)
        and tokens[Phase.EXECUTE] >= expected.min_execute_tokens
    )
    return JobReport(
        job_id=state.job_id,
        status=state.status,
        reason=state.reason,
        assigned_node=state.assigned_node,
        tokens=tokens,
        expected=expected,
        met=met,
    )


async def play(scenario: ScenarioFile, workdir: Path) -> ScenarioReport:
    """Run a parsed scenario with its state under `workdir`."""
    clock = VirtualClock(scenario.start_time)
    faults: list[FaultOutcome] = []

    async with Deployment(
        scenario.services, list(scenario.policy), workdir, clock, scenario.seed
    ) as deployment:
        deployment.populate(scenario.files)
        schedd = Schedd(deployment, scenario.users)
        checks: list[CheckResult] = []

        for seed in scenario.credentials:
            try:
                await schedd.acquire(seed.key(), seed.scopes)
            except CaptokenError as e:
                checks.append(CheckResult(name=f"seed:{seed.key()}", passed=False, detail=e.reason))

        async def run_entry(entry: JobEntry) -> None:
            try:
                await clock.sleep(entry.submit_at)
                job_id = await schedd.submit_job(entry.spec())
                if schedd.jobs[job_id].status is JobStatus.IDLE:
                    await schedd.run_job(job_id)
            finally:
                clock.leave()

        async def run_fault(fault: Fault) -> None:
            try:
                await clock.sleep(fault.at)
                try:
                    outcome = await apply_fault(fault, deployment, schedd)
                except CaptokenError as e:
                    outcome = e.reason
                faults.append(FaultOutcome(at=fault.at, kind=fault.kind, outcome=outcome))
                logger.info("Fault applied", extra={"kind": fault.kind.value, "outcome": outcome})
            finally:
                clock.leave()

        for _ in range(len(scenario.jobs) + len(scenario.faults)):
            clock.join()
        async with asyncio.TaskGroup() as tg:
            for entry in scenario.jobs:
                tg.create_task(run_entry(entry))
            for fault in scenario.faults:
                tg.create_task(run_fault(fault))

        states = [
            schedd.jobs[entry.job_id] for entry in scenario.jobs if entry.job_id in schedd.jobs
        ]
        jobs = [_job_report(entry, schedd.jobs[entry.job_id]) for entry in scenario.jobs]
        checks += [
            _check_containment(deployment),
            _check_phase_gating(states),
            _check_origin_binding(states),
            _check_holds(states),
            _check_attenuation(deployment),
            CheckResult(
                name="expectations",
                passed=all(job.met for job in jobs),
                detail=", ".join(job.job_id for job in jobs if not job.met),
            ),
        ]

        report = ScenarioReport(
            scenario=scenario.name,
            passed=all(check.passed for check in checks),
            jobs=jobs,
            checks=checks,
            faults=faults,
            transcript_digest=deployment.transcript.digest(),
            transcript_messages=len(deployment.transcript.messages),
            credd_restarts=deployment.restarts,
        )

    logger.info("Scenario finished", extra={"scenario": scenario.name, "passed": report.passed})
    return report


async def run_scenario(
    scenario: Path | ScenarioFile,
    workdir: Path | None = None,
    transport: Transport | None = None,
) -> ScenarioReport:
    """
    Load and run a scenario.

    Args:
        scenario: Scenario file, or an already parsed scenario
        workdir: Directory for service state; a temporary one when omitted
        transport: Override the scenario's transport

    Returns:
        ScenarioReport: Final job states and invariant results

    Raises:
        ScenarioParseError: If the file does not parse
    """
    if not isinstance(scenario, ScenarioFile):
        scenario = load_scenario(scenario)
    if transport is not None:
        scenario = scenario.model_copy(
            update={"services": scenario.services.model_copy(update={"transport": transport})}
        )

    if workdir is not None:
        return await play(scenario, Path(workdir))
    with tempfile.TemporaryDirectory(prefix="captoken-sim-") as tmp:
        return await play(scenario, Path(tmp))
