"""Thin command-line client for the analysis service.

The CLI reads one YAML config per run, applies the only two permitted
overrides (--seed and --output-dir) and posts the config to the
service: an in-process instance by default, or a remote one selected
with --server.  All validation and computation happen service-side, so
a config file and an HTTP request are interchangeable.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O or transport error.
"""

from __future__ import annotations

import argparse
import asyncio
import sys

import httpx
import yaml

from fewmode.runner import COMMANDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_KIND_TO_EXIT = {"config": EXIT_CONFIG, "numerical": EXIT_NUMERICAL, "io": EXIT_IO}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewmode",
        description="Spectral Galerkin vorticity simulation and noise-spread diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} analysis from a config file")
        cmd.add_argument("config", help="path to the YAML experiment config")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument(
            "--output-dir", default=None, help="override the config output directory"
        )
        cmd.add_argument(
            "--server",
            default=None,
            help="base URL of a running service (default: run in-process)",
        )
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_payload(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError("top level of the config must be a mapping")
    return raw


def _print_error_body(body: dict) -> int:
    error = body.get("error")
    if isinstance(error, dict):
        print(f"error ({error.get('kind')}): {error.get('message')}", file=sys.stderr)
        for detail in error.get("details", []):
            print(f"  - {detail}", file=sys.stderr)
        return _KIND_TO_EXIT.get(error.get("kind"), EXIT_IO)
    # FastAPI request validation: list every violation with its location
    detail = body.get("detail")
    if isinstance(detail, list):
        print(f"error (config): {len(detail)} validation error(s)", file=sys.stderr)
        for item in detail:
            loc = ".".join(str(p) for p in item.get("loc", []) if p != "body")
            print(f"  - {loc}: {item.get('msg')}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"error: {body}", file=sys.stderr)
    return EXIT_IO


async def _post_run(command: str, payload: dict, server: str | None) -> int:
    if server is None:
        from fewmode.service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        client = httpx.AsyncClient(
            transport=transport, base_url="http://fewmode.internal", timeout=None
        )
    else:
        client = httpx.AsyncClient(base_url=server, timeout=None)
    async with client:
        response = await client.post(f"/run/{command}", json=payload)
    if response.status_code == 200:
        body = response.json()
        print(f"{command}: ok")
        for key, value in body.get("summary", {}).items():
            print(f"  {key}: {value}")
        print(f"  output_dir: {body.get('output_dir')}")
        for item in body.get("outputs", []):
            print(f"  wrote {item['name']}  sha256={item['sha256']}")
        return EXIT_OK
    try:
        body = response.json()
    except ValueError:
        print(f"error: HTTP {response.status_code}: {response.text}", file=sys.stderr)
        return EXIT_IO
    return _print_error_body(body)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("fewmode.service.app:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        payload = _load_payload(args.config)
    except OSError as err:
        print(f"error (io): cannot read {args.config}: {err}", file=sys.stderr)
        return EXIT_IO
    except (yaml.YAMLError, ValueError) as err:
        print(f"error (config): {args.config}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.output_dir is not None:
        payload["output_dir"] = args.output_dir
    try:
        return asyncio.run(_post_run(args.command, payload, args.server))
    except httpx.HTTPError as err:
        print(f"error (io): transport failure: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
