# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from captoken.sim.deployment import Deployment, ServiceSettings, Transport
from captoken.sim.models import Domain, JobSpec, JobState, JobStatus, Message, Phase
from captoken.sim.scenario import (
    ScenarioFile,
    ScenarioReport,
    bundled_scenario,
    load_scenario,
    run_scenario,
)
from captoken.sim.schedd import Schedd, Shadow, Starter
from captoken.sim.transcript import Transcript

__all__ = [
    "Deployment",
    "ServiceSettings",
    "Transport",
    "Domain",
    "JobSpec",
    "JobState",
    "JobStatus",
    "Message",
    "Phase",
    "ScenarioFile",
    "ScenarioReport",
    "bundled_scenario",
    "load_scenario",
    "run_scenario",
    "Schedd",
    "Shadow",
    "Starter",
    "Transcript",
]
