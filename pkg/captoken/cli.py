# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
`captoken` command line.

Exit codes: 0 success, 1 verification or authorization failure, 2 usage or
I/O error. Command output goes to stdout, logs to stderr.
"""

import asyncio
import json
import logging
import secrets
import sys
from pathlib import Path
from typing import NoReturn

import click

from captoken.clock import SystemClock
from captoken.config import load_settings
from captoken.core.claims import IssuerMetadata, TokenClaims
from captoken.core.keys import generate_key, load_key, save_key
from captoken.core.scopes import parse_scope
from captoken.core.tokens import DEFAULT_SKEW, decode_unverified, sign_token, verify_token
from captoken.credd.config import CreddSettings
from captoken.errors import CaptokenError, ConfigError, Malformed, MalformedScope, VerificationError
from captoken.gateway.config import GatewayConfig
from captoken.helpers import setup_logging
from captoken.server.client import IssuerClient
from captoken.server.config import DEFAULT_ACCESS_LIFETIME, IssuerSettings
from captoken.server.issuer import TokenServer
from captoken.sim.deployment import Transport
from captoken.sim.scenario import bundled_scenario, run_scenario

logger = logging.getLogger(__name__)

EXIT_DENIED = 1
EXIT_USAGE = 2

UNVERIFIED_BANNER = "=== UNVERIFIED: signature, issuer and validity were NOT checked ==="


def _fail(code: int, message: str) -> NoReturn:
    click.echo(message, err=True)
    sys.exit(code)


def _read_token(token: str) -> str:
    return sys.stdin.read().strip() if token == "-" else token.strip()


def _dump(value: object) -> str:
    return json.dumps(value, indent=2, sort_keys=True)


config_option = click.option(
    "--config", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path)
)


@click.group(context_settings={"auto_envvar_prefix": "CAPTOKEN"})
@click.option(
    "--log-level",
    default="INFO",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="log level for the structured log lines on stderr",
)
def main(log_level):
    """
    Capability tokens: issue, verify and enforce path-scoped access.
    """
    setup_logging(log_level.upper())


@main.command()
@click.option(
    "--out",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="key file to write (mode 0600)",
)
@click.option("--kid", default=None, help="key id, random when omitted")
def keygen(out, kid):
    """Generate an Ed25519 signing key; prints only the public JWK."""
    if out.exists():
        _fail(EXIT_USAGE, f"{out} already exists, refusing to overwrite")
    key = generate_key(kid)
    try:
        save_key(key, out)
    except OSError as e:
        _fail(EXIT_USAGE, f"cannot write {out}: {e}")
    click.echo(_dump(key.to_jwk().model_dump(mode="json")))


@main.command("token-create")
@click.option(
    "--key", "key_path", type=click.Path(dir_okay=False, path_type=Path), help="signing key file"
)
@click.option("--issuer", default=None, help="issuer URL placed in the token")
@click.option("--subject", required=True, help="token subject")
@click.option("--scope", "scopes", multiple=True, help="scope such as read:/ligo (repeatable)")
@click.option("--audience", default="any", show_default=True, help="audience")
@click.option(
    "--lifetime", default=DEFAULT_ACCESS_LIFETIME, type=click.IntRange(min=1), show_default=True
)
@click.option("--origin", default=None, help="bind the token to one execution node")
@click.option("--now", default=None, type=int, help="issue time, seconds since the epoch")
@click.option("--token-id", default=None, help="token id, random when omitted")
@click.option(
    "--config",
    default=None,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="issuer config; with --project, issue from its project policy (Local Mode)",
)
@click.option("--project", default=None, help="project whose policy rules grant the scopes")
def token_create(
    key_path, issuer, subject, scopes, audience, lifetime, origin, now, token_id, config, project
):
    """Sign an access token and print it."""
    try:
        if project is not None:
            if config is None:
                _fail(EXIT_USAGE, "--project needs --config")
            settings = load_settings(config, IssuerSettings, section="issuer")
            if key_path is not None:
                settings = settings.model_copy(update={"signing_key": key_path})
            if settings.signing_key is None:
                _fail(EXIT_USAGE, "Local Mode needs a signing key (--key or issuer.signing_key)")
            server = TokenServer.from_settings(settings)
            server.access_lifetime = min(lifetime, settings.access_lifetime)
            requested = [parse_scope(s) for s in scopes] or None
            token = server.local_issue(
                subject, project, settings.policy, audience, origin, requested
            )
        else:
            if key_path is None or issuer is None or not scopes:
                _fail(EXIT_USAGE, "--key, --issuer and at least one --scope are required")
            issued_at = SystemClock().now() if now is None else now
            claims = TokenClaims(
                issuer=issuer,
                subject=subject,
                audience=[audience],
                scopes=[parse_scope(s) for s in scopes],
                issued_at=issued_at,
                not_before=issued_at,
                expires_at=issued_at + lifetime,
                token_id=token_id or secrets.token_hex(16),
                origin=origin,
            )
            token = sign_token(claims, load_key(key_path))
    except ConfigError as e:
        _fail(EXIT_USAGE, str(e))
    except MalformedScope as e:
        _fail(EXIT_USAGE, f"{e.reason}: {e}")
    except CaptokenError as e:
        _fail(EXIT_DENIED, f"{e.reason}: {e}")
    click.echo(token)


async def _fetch_metadata(issuer: str) -> IssuerMetadata:
    async with IssuerClient(issuer) as client:
        return await client.fetch_metadata()


@main.command("token-verify")
@click.argument("token")
@click.option("--issuer", default=None, help="trusted issuer URL")
@click.option("--audience", required=True, help="audience of the verifying service")
@click.option(
    "--discovery",
    default=None,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="local discovery document instead of fetching it from the issuer",
)
@click.option("--now", default=None, type=int, help="verification time, seconds since the epoch")
@click.option("--skew", default=DEFAULT_SKEW, type=click.IntRange(min=0), show_default=True)
def token_verify(token, issuer, audience, discovery, now, skew):
    """Verify a token (`-` reads stdin); prints its claims or the failed check."""
    try:
        if discovery is not None:
            metadata = IssuerMetadata.model_validate_json(discovery.read_bytes())
        elif issuer is not None:
            metadata = asyncio.run(_fetch_metadata(issuer))
        else:
            _fail(EXIT_USAGE, "either --issuer or --discovery is required")
    except (CaptokenError, OSError, ValueError) as e:
        _fail(EXIT_USAGE, f"cannot load issuer metadata: {e}")

    if issuer is not None and metadata.issuer != issuer:
        _fail(EXIT_USAGE, f"discovery document is for {metadata.issuer!r}, not {issuer!r}")

    try:
        claims = verify_token(
            _read_token(token),
            {metadata.issuer: metadata},
            audience,
            SystemClock().now() if now is None else now,
            skew,
        )
    except VerificationError as e:
        click.echo(e.reason)
        logger.info("Token rejected", extra={"reason": e.reason, "detail": str(e)})
        sys.exit(EXIT_DENIED)
    click.echo(_dump(claims.to_payload()))


@main.command("token-inspect")
@click.argument("token")
def token_inspect(token):
    """Decode a token WITHOUT verifying it (`-` reads stdin)."""
    try:
        header, payload = decode_unverified(_read_token(token))
    except Malformed as e:
        _fail(EXIT_USAGE, f"Malformed: {e}")
    click.echo(UNVERIFIED_BANNER)
    click.echo(_dump({"header": header, "claims": payload}))


@main.command("serve-issuer")
@config_option
def serve_issuer(config):
    """Run the token server over HTTP."""
    import uvicorn

    from captoken.server.app import create_issuer_app

    try:
        settings = load_settings(config, IssuerSettings, section="issuer")
        server = TokenServer.from_settings(settings)
    except ConfigError as e:
        _fail(EXIT_USAGE, str(e))
    host, _, port = settings.listen.rpartition(":")
    uvicorn.run(create_issuer_app(server), host=host, port=int(port), log_config=None)


@main.command("serve-gateway")
@config_option
def serve_gateway(config):
    """Run the data gateway over HTTP."""
    from captoken.gateway.app import serve_gateway as serve

    try:
        settings = load_settings(config, GatewayConfig, section="gateway")
    except ConfigError as e:
        _fail(EXIT_USAGE, str(e))
    asyncio.run(serve(settings))


@main.command("serve-credd")
@config_option
def serve_credd(config):
    """Run the credential daemon: control socket plus refresher."""
    from captoken.credd.daemon import serve_credd as serve

    try:
        settings = load_settings(config, CreddSettings, section="credd")
    except ConfigError as e:
        _fail(EXIT_USAGE, str(e))
    asyncio.run(serve(settings))


@main.command()
@click.argument("scenario")
@click.option(
    "--out",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="also write the report here",
)
@click.option(
    "--transport",
    default=None,
    type=click.Choice([t.value for t in Transport]),
    help="override the scenario's transport",
)
def demo(scenario, out, transport):
    """Run a scenario file (or a bundled scenario by name) and print its report."""
    path = Path(scenario)
    if not path.exists() and bundled_scenario(scenario).exists():
        path = bundled_scenario(scenario)
    if not path.is_file():
        _fail(EXIT_USAGE, f"no scenario file {scenario}")

    try:
        override = Transport(transport) if transport else None
        report = asyncio.run(run_scenario(path, transport=override))
    except CaptokenError as e:
        _fail(EXIT_USAGE, f"{e.reason}: {e}")

    document = report.model_dump_json(indent=2)
    click.echo(document)
    if out is not None:
        out.write_text(document, encoding="utf-8")
    sys.exit(0 if report.passed else EXIT_DENIED)
