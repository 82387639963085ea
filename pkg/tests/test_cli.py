# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

import json
import logging
import os
import stat

import pytest
from click.testing import CliRunner
from conftest import AUDIENCE, ISSUER, T0

from captoken.cli import UNVERIFIED_BANNER, main
from captoken.core.claims import IssuerMetadata
from captoken.core.keys import load_key


@pytest.fixture
def runner():
    yield CliRunner()
    # drop the handler bound to the runner's stderr
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_captoken", False):
            root.removeHandler(handler)


def invoke(runner, *args, **kwargs):
    return runner.invoke(main, ["--log-level", "ERROR", *map(str, args)], **kwargs)


@pytest.fixture
def key_file(runner, tmp_path):
    path = tmp_path / "issuer.key"
    result = invoke(runner, "keygen", "--out", path, "--kid", "cli-1")
    assert result.exit_code == 0, result.output
    return path


@pytest.fixture
def discovery(tmp_path, key_file):
    path = tmp_path / "discovery.json"
    metadata = IssuerMetadata.for_issuer(ISSUER, [load_key(key_file).public()])
    path.write_text(metadata.model_dump_json())
    return path


def create(runner, key_file, *extra):
    result = invoke(
        runner,
        "token-create",
        "--key", key_file,
        "--issuer", ISSUER,
        "--subject", "alice",
        "--scope", "read:/ligo/frames",
        "--audience", AUDIENCE,
        "--lifetime", 600,
        "--now", T0,
        "--token-id", "cli-token",
        *extra,
    )  # fmt: skip
    assert result.exit_code == 0, result.output
    return result.output.strip()


def test_keygen(runner, tmp_path, key_file):
    assert stat.S_IMODE(os.stat(key_file).st_mode) == 0o600
    assert load_key(key_file).key_id == "cli-1"

    # refuses to overwrite, prints only public material
    result = invoke(runner, "keygen", "--out", key_file)
    assert result.exit_code == 2
    assert "already exists" in result.output

    result = invoke(runner, "keygen", "--out", tmp_path / "second.key")
    jwk = json.loads(result.output)
    assert jwk["kty"] == "OKP"
    assert jwk["crv"] == "Ed25519"
    assert "d" not in jwk


def test_create_and_verify(runner, key_file, discovery):
    token = create(runner, key_file, "--origin", "exec-1")

    result = invoke(
        runner, "token-verify", token, "--discovery", discovery, "--audience", AUDIENCE, "--now", T0 + 10
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["iss"] == ISSUER
    assert payload["sub"] == "alice"
    assert payload["scope"] == "read:/ligo/frames"
    assert payload["jti"] == "cli-token"
    assert payload["origin"] == "exec-1"


@pytest.mark.parametrize(
    "now, audience, reason",
    [
        (T0 + 700, AUDIENCE, "Expired"),
        (T0 - 120, AUDIENCE, "NotYetValid"),
        (T0 + 10, "https://elsewhere.test", "AudienceMismatch"),
    ],
)
def test_verify_rejects(runner, key_file, discovery, now, audience, reason):
    token = create(runner, key_file)

    result = invoke(
        runner, "token-verify", token, "--discovery", discovery, "--audience", audience, "--now", now
    )

    assert result.exit_code == 1
    assert result.output.strip() == reason


def test_verify_usage_errors(runner, key_file, discovery):
    token = create(runner, key_file)

    result = invoke(runner, "token-verify", token, "--audience", AUDIENCE)
    assert result.exit_code == 2

    result = invoke(
        runner,
        "token-verify", token,
        "--discovery", discovery,
        "--issuer", "https://other.test",
        "--audience", AUDIENCE,
    )  # fmt: skip
    assert result.exit_code == 2
    assert "discovery document is for" in result.output


def test_verify_from_stdin(runner, key_file, discovery):
    token = create(runner, key_file)

    result = invoke(
        runner,
        "token-verify", "-",
        "--discovery", discovery,
        "--audience", AUDIENCE,
        "--now", T0,
        input=token + "\n",
    )  # fmt: skip

    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["sub"] == "alice"


def test_inspect(runner, key_file):
    token = create(runner, key_file)

    result = invoke(runner, "token-inspect", token)

    assert result.exit_code == 0
    banner, _, body = result.output.partition("\n")
    assert banner == UNVERIFIED_BANNER
    decoded = json.loads(body)
    assert decoded["header"]["kid"] == "cli-1"
    assert decoded["claims"]["sub"] == "alice"

    result = invoke(runner, "token-inspect", "not-a-token")
    assert result.exit_code == 2
    assert "Malformed" in result.output
    assert UNVERIFIED_BANNER not in result.output


def test_create_needs_arguments(runner, key_file):
    result = invoke(runner, "token-create", "--key", key_file, "--subject", "alice")
    assert result.exit_code == 2

    result = invoke(
        runner,
        "token-create",
        "--key", key_file,
        "--issuer", ISSUER,
        "--subject", "alice",
        "--scope", "read:ligo",
    )  # fmt: skip
    assert result.exit_code == 2
    assert "MalformedScope" in result.output


def test_local_mode(runner, tmp_path, key_file):
    config = tmp_path / "issuer.toml"
    config.write_text(
        "[issuer]\n"
        'issuer = "https://submit.test"\n'
        f'signing_key = "{key_file}"\n'
        "[[issuer.policy]]\n"
        'attribute_key = "project"\n'
        'attribute_value = "ligo"\n'
        'grantable_scopes = ["read:/ligo", "write:/ligo/out"]\n'
    )

    result = invoke(
        runner,
        "token-create",
        "--config", config,
        "--project", "ligo",
        "--subject", "alice",
        "--audience", AUDIENCE,
    )  # fmt: skip
    assert result.exit_code == 0, result.output

    discovery = tmp_path / "local.json"
    metadata = IssuerMetadata.for_issuer("https://submit.test", [load_key(key_file).public()])
    discovery.write_text(metadata.model_dump_json())
    verified = invoke(
        runner, "token-verify", result.output.strip(), "--discovery", discovery, "--audience", AUDIENCE
    )
    assert verified.exit_code == 0, verified.output
    assert json.loads(verified.output)["scope"] == "read:/ligo write:/ligo/out"

    narrowed = invoke(
        runner,
        "token-create",
        "--config", config,
        "--project", "ligo",
        "--subject", "alice",
        "--scope", "read:/ligo/frames",
    )  # fmt: skip
    assert narrowed.exit_code == 0, narrowed.output
    inspected = invoke(runner, "token-inspect", narrowed.output.strip())
    assert '"scope": "read:/ligo/frames"' in inspected.output

    result = invoke(
        runner, "token-create", "--config", config, "--project", "virgo", "--subject", "alice"
    )
    assert result.exit_code == 1
    assert "NoMatchingPolicy" in result.output

    result = invoke(
        runner,
        "token-create",
        "--config", config,
        "--project", "ligo",
        "--subject", "alice",
        "--scope", "delete:/ligo",
    )  # fmt: skip
    assert result.exit_code == 2
    assert "MalformedScope" in result.output

    result = invoke(runner, "token-create", "--project", "ligo", "--subject", "alice")
    assert result.exit_code == 2


def test_bad_config(runner, tmp_path):
    config = tmp_path / "issuer.toml"
    config.write_text("[issuer\n")

    result = invoke(
        runner, "token-create", "--config", config, "--project", "ligo", "--subject", "alice"
    )

    assert result.exit_code == 2


def test_demo(runner, tmp_path):
    out = tmp_path / "report.json"

    result = invoke(runner, "demo", "nominal", "--out", out)

    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert report["scenario"] == "nominal"
    assert report["passed"] is True

    result = invoke(runner, "demo", "no-such-scenario")
    assert result.exit_code == 2
    assert "no scenario file" in result.output
