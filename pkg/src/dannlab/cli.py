"""Command-line client for the experiment service.

Every experiment subcommand goes through the HTTP API: with --server it
talks to a running instance, otherwise it mounts the app in-process and
speaks ASGI directly, so the CLI works standalone without losing the
single code path. ``serve`` starts the HTTP service itself.

Exit status 0 on success; on failure a single ``error: ...`` line goes to
stderr and the status is nonzero.
"""

import argparse
import asyncio
import sys

import httpx

from .config import KINDS

POLL_SECONDS = 0.2


def build_parser():
    parser = argparse.ArgumentParser(prog="dannlab", description="adversarial domain-adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--server", help="base URL of a running service (default: in-process)")
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


async def submit_and_wait(client: httpx.AsyncClient, request: dict) -> dict:
    response = await client.post("/jobs", json=request)
    if response.status_code != 200:
        detail = response.json().get("detail", response.text)
        raise RuntimeError(f"submission rejected: {detail}")
    job = response.json()
    while job["state"] in ("queued", "running"):
        await asyncio.sleep(POLL_SECONDS)
        response = await client.get(f"/jobs/{job['id']}")
        response.raise_for_status()
        job = response.json()
    return job


async def run_job(args) -> dict:
    request = {"kind": args.command}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            request["config_text"] = fh.read()
    for name, value in (("seed", args.seed), ("out_dir", args.out), ("trials", args.trials)):
        if value is not None:
            request[name] = value
    if args.server:
        async with httpx.AsyncClient(base_url=args.server, timeout=None) as client:
            return await submit_and_wait(client, request)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(transport=transport, base_url="http://dannlab", timeout=None) as client:
        return await submit_and_wait(client, request)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        job = asyncio.run(run_job(args))
    except (OSError, RuntimeError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if job["state"] != "done":
        print(f"error: {job.get('error', 'job failed')}", file=sys.stderr)
        return 1
    result = job.get("result") or {}
    print(f"job {job['id']} done, outputs in {result.get('out_dir', '?')}:")
    for name in result.get("outputs", []):
        print(f"  {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
