"""Command-line client for the lab service.

Every subcommand issues an HTTP request: against a running server when
--server (or FLOATLAB_SERVER) is given, otherwise against an in-process
instance of the same app, so the one service surface handles both cases.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error,
1 anything else.  FLOATLAB_NUM_THREADS caps the BLAS thread pools.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys


def _setup_threads() -> None:
    n = os.environ.get("FLOATLAB_NUM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


_EXIT_CODES = {"config": 2, "data": 3, "numeric": 4}


class _Client:
    """Minimal POST/GET client over a real server or the in-process app."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        import httpx

        if self.server:
            r = httpx.post(self.server + path, json=payload, timeout=None)
            return r.status_code, r.json()

        from .service import create_app

        async def go():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport, base_url="http://floatlab") as client:
                r = await client.post(path, json=payload, timeout=None)
                return r.status_code, r.json()

        return asyncio.run(go())


def _finish(status: int, body: dict, quiet_keys: tuple[str, ...] = ()) -> int:
    if status == 200:
        shown = {k: v for k, v in body.items() if k not in quiet_keys}
        print(json.dumps(shown, indent=2, sort_keys=True))
        return 0
    err = body.get("error") or {}
    if isinstance(err, dict) and "kind" in err:
        stage = f" at {err['stage']}" if err.get("stage") else ""
        print(f"error [{err['kind']}]{stage}: {err.get('message', '')}", file=sys.stderr)
        return _EXIT_CODES.get(err["kind"], 1)
    # pydantic request validation from FastAPI: treat as config error
    if status == 422:
        print(f"error [config]: {json.dumps(body)}", file=sys.stderr)
        return 2
    print(f"error [http {status}]: {json.dumps(body)}", file=sys.stderr)
    return 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", default=os.environ.get("FLOATLAB_SERVER"),
                   help="base URL of a running service; default runs in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floatlab",
                                     description="conditional adversarial training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    _add_common(p)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run a training experiment from a JSON config")
    _add_common(p)
    p.add_argument("--config", required=True, help="path to the experiment config JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. --set train.epochs=3")

    p = sub.add_parser("eval", help="evaluate a checkpoint at one lambda_n")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--lambda-n", type=float, required=True)
    p.add_argument("--lambda-th", type=float, default=0.0)
    p.add_argument("--attack", default="pgd7", help="pgd<k>, fgsm, or none")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--step-size", type=float, default=0.033)
    p.add_argument("--slim-factor", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("sweep", help="trade-off table over a lambda_n set")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--lambda-n-set", required=True,
                   help="comma-separated values, e.g. 0.0,0.2,0.7,1.0")
    p.add_argument("--lambda-th", type=float, default=0.0)
    p.add_argument("--attacks", default="pgd7", help="comma-separated attack names")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--step-size", type=float, default=0.033)
    p.add_argument("--slim-factor", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("cost", help="hardware delay/parameter/FLOP accounting")
    _add_common(p)
    p.add_argument("--preset", choices=["resnet34", "wrn16_8", "wrn40_2"])
    p.add_argument("--layers-json", help="JSON file with a list of layer specs")
    p.add_argument("--variant", choices=["float", "oat"], default="float")
    p.add_argument("--csv", dest="csv_path", help="write the per-layer delay table here")
    p.add_argument("--json", dest="json_path", help="write totals JSON here")
    p.add_argument("--io-bits", type=int, default=64)
    p.add_argument("--weight-bits", type=int, default=8)
    p.add_argument("--banks", type=int, default=4)
    p.add_argument("--mults", type=int, default=8)
    p.add_argument("--read-ns", type=float, default=9.0)
    p.add_argument("--mult-ns", type=float, default=4.0)

    p = sub.add_parser("inspect", help="report a checkpoint's layers, masks, and alphas")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)

    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            print(f"error [config]: override {pair!r} is not KEY=VALUE", file=sys.stderr)
            raise SystemExit(2)
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def main(argv: list[str] | None = None) -> int:
    _setup_threads()
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    client = _Client(args.server)

    if args.command == "synth":
        status, body = client.post("/synth", {
            "classes": args.classes, "per_class": args.per_class, "channels": args.channels,
            "height": args.height, "width": args.width, "seed": args.seed, "out_path": args.out,
        })
        return _finish(status, body)

    if args.command == "train":
        try:
            with open(args.config) as f:
                payload = json.load(f)
        except OSError as e:
            print(f"error [config]: cannot read config: {e}", file=sys.stderr)
            return 2
        except ValueError as e:
            print(f"error [config]: config is not valid JSON: {e}", file=sys.stderr)
            return 2
        overrides = _parse_overrides(args.set)
        if overrides:
            from .config import apply_overrides
            from .errors import ConfigError

            try:
                payload = apply_overrides(payload, overrides)
            except ConfigError as e:
                print(f"error [config]: {e}", file=sys.stderr)
                return 2
        status, body = client.post("/train", {"config": payload})
        return _finish(status, body, quiet_keys=("history",))

    if args.command == "eval":
        status, body = client.post("/eval", {
            "checkpoint": args.checkpoint, "dataset": args.dataset,
            "lambda_n": args.lambda_n, "lambda_th": args.lambda_th,
            "attack": args.attack, "epsilon": args.epsilon, "step_size": args.step_size,
            "slim_factor": args.slim_factor, "seed": args.seed,
        })
        return _finish(status, body)

    if args.command == "sweep":
        try:
            lambda_set = [float(v) for v in args.lambda_n_set.split(",") if v != ""]
        except ValueError:
            print("error [config]: lambda-n-set must be comma-separated numbers", file=sys.stderr)
            return 2
        status, body = client.post("/sweep", {
            "checkpoint": args.checkpoint, "dataset": args.dataset,
            "lambda_n_set": lambda_set, "lambda_th": args.lambda_th,
            "attacks": [a for a in args.attacks.split(",") if a], "out_dir": args.out_dir,
            "epsilon": args.epsilon, "step_size": args.step_size,
            "slim_factor": args.slim_factor, "seed": args.seed,
        })
        return _finish(status, body)

    if args.command == "cost":
        layers = None
        if args.layers_json:
            try:
                with open(args.layers_json) as f:
                    layers = json.load(f)
            except (OSError, ValueError) as e:
                print(f"error [config]: cannot read layers JSON: {e}", file=sys.stderr)
                return 2
        status, body = client.post("/cost", {
            "preset": args.preset, "layers": layers, "variant": args.variant,
            "hw": {"io_bits": args.io_bits, "weight_bits": args.weight_bits,
                   "banks": args.banks, "mults": args.mults,
                   "read_ns": args.read_ns, "mult_ns": args.mult_ns},
            "csv_path": args.csv_path, "json_path": args.json_path,
        })
        return _finish(status, body, quiet_keys=("delays",))

    if args.command == "inspect":
        status, body = client.post("/inspect", {"checkpoint": args.checkpoint})
        return _finish(status, body)

    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
