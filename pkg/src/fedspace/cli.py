"""Command line entry point.

Exit codes: 0 success, 1 usage or invalid input, 2 connectivity,
3 protocol termination, 4 policy denial.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

from fedspace.errors import (
    FedspaceError,
    IllegalTransition,
    ProviderUnreachable,
    SourceUnreachable,
    StoreUnavailable,
    TransferTerminated,
)
from fedspace.negotiation import NegotiationConsumer, NegotiationState
from fedspace.service.client import ConnectorClient, HttpProviderTransport, pull_transfer

EXIT_OK, EXIT_USAGE, EXIT_CONNECT, EXIT_TERMINATED, EXIT_DENIED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args, doc: Any, lines: Callable[[], list[str]]) -> None:
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for line in lines():
            print(line)


def _table(rows: list[list[str]], header: list[str]) -> list[str]:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return [fmt.format(*header), fmt.format(*("-" * w for w in widths))] + [fmt.format(*map(str, r)) for r in rows]


def _admin(url: str, args) -> ConnectorClient:
    return ConnectorClient(url, admin_token=args.admin_token)


def _repeat(args, run: Callable[[], int]) -> int:
    """Run once, or forever every ``--every`` seconds until interrupted."""
    if not args.every:
        return run()
    try:
        while True:
            code = run()
            if code not in (EXIT_OK, EXIT_CONNECT):
                return code
            time.sleep(args.every)
    except KeyboardInterrupt:
        return EXIT_OK


# -- commands -------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from fedspace.service.app import create_app
    from fedspace.service.config import ConfigError, load_config
    from fedspace.service.runtime import Runtime

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.port is not None or args.host is not None:
        from dataclasses import replace

        config = replace(
            config,
            port=args.port if args.port is not None else config.port,
            host=args.host or config.host,
        )
    runtime = Runtime(config)
    runtime.start()
    logging.getLogger(__name__).info(
        "event=serve.start participant=%s role=%s listen=%s",
        config.participant_id,
        config.role.value,
        config.listen_address,
    )
    try:
        uvicorn.run(create_app(runtime), host=config.host, port=config.port, log_level="warning")
    finally:
        runtime.close()
    return EXIT_OK


def cmd_ingest(args) -> int:
    text = Path(args.file).read_bytes()

    def run() -> int:
        with _admin(args.store, args) as client:
            report = client.ingest(text)
        _emit(args, report, lambda: [f"created={report['created']} updated={report['updated']}"])
        return EXIT_OK

    return _repeat(args, run)


def cmd_federate(args) -> int:
    def run() -> int:
        with _admin(args.store, args) as client:
            report = client.federate(args.source)
        _emit(args, report, lambda: [" ".join(f"{k}={report[k]}" for k in ("created", "updated", "unchanged", "conflicts"))])
        return EXIT_OK

    return _repeat(args, run)


def cmd_domains(args) -> int:
    with ConnectorClient(args.provider) as client:
        rows = client.domains()
    _emit(args, rows, lambda: _table([[r["urn"], r["title"], r["datasetCount"]] for r in rows], ["URN", "TITLE", "DATASETS"]))
    return EXIT_OK


def cmd_datasets(args) -> int:
    with ConnectorClient(args.provider) as client:
        rows = client.datasets(args.domain)
    _emit(
        args,
        rows,
        lambda: _table([[r["urn"], r["title"], r["format"], r["accessEndpoint"]] for r in rows], ["URN", "TITLE", "FORMAT", "ENDPOINT"]),
    )
    return EXIT_OK


def cmd_search(args) -> int:
    with ConnectorClient(args.provider) as client:
        rows = client.search(args.query)
    _emit(args, rows, lambda: _table([[r["urn"], r["name"]] for r in rows], ["URN", "NAME"]))
    return EXIT_OK


def cmd_policy_create(args) -> int:
    try:
        doc = json.loads(Path(args.file).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UsageError(f"{args.file}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{args.file}: policy file must hold a JSON object")
    doc["target"] = args.target
    with _admin(args.provider, args) as client:
        policy = client.create_policy(doc)
    _emit(args, policy, lambda: [policy["uid"]])
    return EXIT_OK


def cmd_policy_list(args) -> int:
    with _admin(args.provider, args) as client:
        policies = client.list_policies(args.target)
    _emit(
        args,
        policies,
        lambda: _table([[p["uid"], p["@type"], p["status"], p["createdAt"]] for p in policies], ["UID", "TYPE", "STATUS", "CREATED"]),
    )
    return EXIT_OK


def cmd_negotiate(args) -> int:
    if args.consumer:
        with ConnectorClient(args.consumer) as client:
            doc = client.consumer_negotiate(args.provider, args.offer)
    else:
        consumer = NegotiationConsumer(args.participant)
        with ConnectorClient(args.provider) as client:
            doc = consumer.negotiate(HttpProviderTransport(client), args.offer).to_document()
    finalized = doc["state"] == NegotiationState.FINALIZED.value
    _emit(
        args,
        doc,
        lambda: [doc["agreementId"]] if finalized else [f"{doc['state']}: {doc.get('reason')}"],
    )
    return EXIT_OK if finalized else EXIT_TERMINATED


def cmd_transfer(args) -> int:
    if args.consumer:
        with ConnectorClient(args.consumer) as client:
            process, data = client.consumer_transfer(args.provider, args.agreement, args.format)
    else:
        with ConnectorClient(args.provider) as client:
            process, data = pull_transfer(client, args.agreement, args.format)
    out = Path(args.out)
    out.write_bytes(data)
    _emit(args, process, lambda: [f"{process['state']} {len(data)} bytes -> {out}"])
    return EXIT_OK


def cmd_demo(args) -> int:
    from fedspace.demo import run_demo

    result = run_demo(
        Path(args.fixtures) if args.fixtures else None,
        Path(args.workdir) if args.workdir else None,
        report=(lambda line: None) if args.json else print,
    )
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        print("PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_TERMINATED


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedspace", description="Federated metadata data-space connector.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, fn, help: str, **kw) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, **kw)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(fn=fn)
        return p

    def admin_token(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--admin-token",
            default=os.environ.get("FEDSPACE_ADMIN_TOKEN", "change-me"),
            help="value of the X-Admin-Token header (default: $FEDSPACE_ADMIN_TOKEN)",
        )

    p = command("serve", cmd_serve, "run a connector instance")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    p = command("ingest", cmd_ingest, "load an ingestion file into a store")
    p.add_argument("--file", required=True)
    p.add_argument("--store", required=True, help="base URL of the store instance")
    p.add_argument("--every", type=float, metavar="SECONDS")
    admin_token(p)

    p = command("federate", cmd_federate, "pull a source store into a store")
    p.add_argument("--source", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--every", type=float, metavar="SECONDS")
    admin_token(p)

    p = command("domains", cmd_domains, "list catalogs exposed by a provider")
    p.add_argument("--provider", required=True)
    p = command("datasets", cmd_datasets, "list datasets of a domain")
    p.add_argument("--provider", required=True)
    p.add_argument("--domain", required=True)
    p = command("search", cmd_search, "free-text dataset search")
    p.add_argument("--provider", required=True)
    p.add_argument("query")

    policy = sub.add_parser("policy", help="manage policies")
    psub = policy.add_subparsers(dest="policy_command", required=True, parser_class=_Parser)
    for name, fn, help in (("create", cmd_policy_create, "create an offer"), ("list", cmd_policy_list, "list policies")):
        p = psub.add_parser(name, help=help)
        p.add_argument("--json", action="store_true")
        p.add_argument("--provider", required=True)
        p.add_argument("--target", required=name == "create")
        if name == "create":
            p.add_argument("--file", required=True)
        admin_token(p)
        p.set_defaults(fn=fn)

    p = command("negotiate", cmd_negotiate, "negotiate an offer")
    p.add_argument("--provider", required=True)
    p.add_argument("--offer", required=True)
    p.add_argument("--consumer", help="let this consumer instance negotiate instead of the CLI")
    p.add_argument("--participant", default="cli-consumer", help="consumer participant id")

    p = command("transfer", cmd_transfer, "run a transfer and save the bytes")
    p.add_argument("--provider", required=True)
    p.add_argument("--agreement", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", help="media type (default: the dataset's format)")
    p.add_argument("--consumer", help="let this consumer instance run the transfer")

    p = command("demo", cmd_demo, "run the loopback end-to-end scenario")
    p.add_argument("--fixtures", help="fixtures directory (default: the repository's)")
    p.add_argument("--workdir", help="keep instance data here instead of a temp dir")
    return parser


def exit_code_for(exc: FedspaceError) -> int:
    if isinstance(exc, (ProviderUnreachable, SourceUnreachable, StoreUnavailable)):
        return EXIT_CONNECT
    if isinstance(exc, TransferTerminated):
        return EXIT_DENIED if exc.reason == "policy denied" else EXIT_TERMINATED
    status = getattr(exc, "status", None)
    if status in (502, 503):
        return EXIT_CONNECT
    if isinstance(exc, IllegalTransition) or status == 409:
        return EXIT_TERMINATED
    return EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command == "serve" else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FedspaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
