"""Command-line client for the certification service.

Every subcommand builds a JSON request and sends it to the HTTP service:
a remote one when ``--server`` is given, otherwise an in-process instance
of the same app (no network, no daemon needed). A JSON config file
(``--config`` or the PATCHCERT_CONFIG environment variable) can pre-fill
any flag; explicit flags win.

Exit codes: 0 success, 1 usage, 2 verification/audit failure, 3 backend
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_BACKEND = 3

_EXIT_BY_STATUS = {400: EXIT_USAGE, 422: EXIT_VERIFICATION, 502: EXIT_BACKEND}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


class _CommandError(Exception):
    """Carries the exit code for a failed service call."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _build_parser() -> _Parser:
    parser = _Parser(prog="patchcert", description=__doc__)
    parser.add_argument("--server", default=None, help="service URL (default: in-process)")
    parser.add_argument("--config", default=None, help="JSON config mirroring the flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-masks", help="build and verify a mask set")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--patch-frac", type=float, default=None)
    p.add_argument("--patch-h", type=int, default=None)
    p.add_argument("--patch-w", type=int, default=None)
    p.add_argument("--scheme", default=None,
                   choices=["col", "row", "3mask", "4mask", "det-col", "det-row"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mask-width", type=int, default=None,
                   help="detection stripe extent W'' (or H'' for det-row)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("certify", help="certify one image or a directory")
    p.add_argument("--image", default=None)
    p.add_argument("--masks", default=None)
    p.add_argument("--mode", default=None, choices=["recovery", "detection"])
    p.add_argument("--backend", default=None, help="'toy' or 'process:<command>'")
    p.add_argument("--n-patches", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--colorize", action="store_true", default=None)
    p.add_argument("--allow-nondeterministic", action="store_true", default=None,
                   help="let detection mode run on nondeterministic backends")
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="aggregate metrics over a dataset")
    p.add_argument("--pred", default=None)
    p.add_argument("--cert", default=None)
    p.add_argument("--gt", default=None)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--big-threshold", type=float, default=None)
    p.add_argument("--ignore-label", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("audit", help="brute-force soundness audits")
    p.add_argument("--masks", default=None)
    p.add_argument("--image", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--random-contents", type=int, default=None)
    p.add_argument("--soundness-contents", type=int, default=None)
    p.add_argument("--attack-budget", type=int, default=None)
    p.add_argument("--n-patches", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)

    return parser


def _load_config(path):
    if path is None:
        path = os.environ.get("PATCHCERT_CONFIG")
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve(args, config: dict, key: str, default=None):
    """Flag value if given, else the config section's value, else default."""
    cli_val = getattr(args, key.replace("-", "_"), None)
    if cli_val is not None:
        return cli_val
    section = config.get(args.command, {})
    if key in section:
        return section[key]
    return default


class _Client:
    def __init__(self, server: str | None):
        self.server = server
        if server is None:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)
        else:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", {})
            except ValueError:
                detail = {}
            message = detail.get("message") if isinstance(detail, dict) else str(detail)
            raise _CommandError(
                _EXIT_BY_STATUS.get(resp.status_code, EXIT_USAGE),
                message or resp.text,
            )
        return resp.json()

    def close(self):
        self._client.close()


_SCHEME_ALIASES = {"col": "column"}


def _cmd_gen_masks(client, args, config) -> int:
    scheme = _resolve(args, config, "scheme")
    if scheme is None:
        sys.stderr.write("error: --scheme is required\n")
        return EXIT_USAGE
    payload = {
        "height": _resolve(args, config, "height"),
        "width": _resolve(args, config, "width"),
        "scheme": _SCHEME_ALIASES.get(scheme, scheme),
        "k": _resolve(args, config, "k"),
        "patch_frac": _resolve(args, config, "patch-frac"),
        "patch_h": _resolve(args, config, "patch-h"),
        "patch_w": _resolve(args, config, "patch-w"),
        "mask_width": _resolve(args, config, "mask-width"),
        "out_dir": _resolve(args, config, "out"),
    }
    if payload["height"] is None or payload["width"] is None or payload["out_dir"] is None:
        sys.stderr.write("error: --height, --width and --out are required\n")
        return EXIT_USAGE
    info = client.post("/masksets", payload)
    print(f"wrote {info['k']} {info['scheme']} masks to {info['out_dir']}")
    print(f"patch size: {info['patch_height']}x{info['patch_width']}")
    if info["kind"] == "recovery":
        print(
            f"strength: computed {info['computed_strength']} "
            f"(declared {info['declared_strength']}), "
            f"block uniqueness: {info['block_uniqueness']}"
        )
    else:
        print(f"coverage verified: {info['coverage_verified']}")
    for note in info.get("notes", []):
        print(f"note: {note}")
    return EXIT_OK


def _cmd_certify(client, args, config) -> int:
    payload = {
        "image": _resolve(args, config, "image"),
        "masks_dir": _resolve(args, config, "masks"),
        "mode": _resolve(args, config, "mode"),
        "backend": _resolve(args, config, "backend", "toy"),
        "n_patches": _resolve(args, config, "n-patches", 1),
        "jobs": _resolve(args, config, "jobs", 1),
        "colorize": bool(_resolve(args, config, "colorize", False)),
        "allow_nondeterministic": bool(
            _resolve(args, config, "allow-nondeterministic", False)
        ),
        "out_dir": _resolve(args, config, "out"),
    }
    for key in ("image", "masks_dir", "mode", "out_dir"):
        if payload[key] is None:
            sys.stderr.write("error: --image, --masks, --mode and --out are required\n")
            return EXIT_USAGE
    result = client.post("/certify", payload)
    for entry in result["images"]:
        print(
            f"{entry['image']}: certified {entry['certified_fraction']:.2%} "
            f"of pixels ({entry['mode']}) -> {entry['out_dir']}"
        )
    return EXIT_OK


def _cmd_eval(client, args, config) -> int:
    payload = {
        "pred_dir": _resolve(args, config, "pred"),
        "cert_dir": _resolve(args, config, "cert"),
        "gt_dir": _resolve(args, config, "gt"),
        "num_classes": _resolve(args, config, "num-classes"),
        "big_threshold": _resolve(args, config, "big-threshold", 0.20),
        "ignore_label": _resolve(args, config, "ignore-label"),
        "out_path": _resolve(args, config, "out"),
    }
    if payload["pred_dir"] is None or payload["gt_dir"] is None or payload["num_classes"] is None:
        sys.stderr.write("error: --pred, --gt and --num-classes are required\n")
        return EXIT_USAGE
    result = client.post("/evaluate", payload)
    ds = result["report"]["dataset"]
    big = result["report"]["big_classes"]
    print(
        f"images: {result['report']['num_images']}  "
        f"mIoU: {ds['miou']:.4f}  mR: {ds['mean_recall']:.4f}  "
        f"cmR: {ds['certified_mean_recall']:.4f}  %C: {ds['pct_certified_correct']:.4f}"
    )
    print(f"big classes (> {big['threshold']:.0%}): {big['classes']}")
    if payload["out_path"]:
        print(f"wrote {payload['out_path']}")
    return EXIT_OK


def _cmd_audit(client, args, config) -> int:
    payload = {
        "masks_dir": _resolve(args, config, "masks"),
        "image": _resolve(args, config, "image"),
        "seed": _resolve(args, config, "seed", 0),
        "num_random": _resolve(args, config, "random-contents", 8),
        "soundness_random": _resolve(args, config, "soundness-contents", 4),
        "attack_budget": _resolve(args, config, "attack-budget", 0),
        "n_patches": _resolve(args, config, "n-patches", 1),
        "out_path": _resolve(args, config, "out"),
    }
    if payload["masks_dir"] is None:
        sys.stderr.write("error: --masks is required\n")
        return EXIT_USAGE
    result = client.post("/audit", payload)
    report = result["report"]
    for section in ("erasure", "soundness"):
        r = report[section]
        print(
            f"{section}: {len(r['violations'])} violations over "
            f"{r['num_locations']} locations x {r['battery_size']} contents"
        )
    if "attack_search" in report:
        a = report["attack_search"]
        print(
            f"attack search: clean quality {a['clean_quality']:.4f}, "
            f"worst found {a['worst_quality']:.4f}"
        )
    if not result["ok"]:
        sys.stderr.write("error: audit found violations\n")
        return EXIT_VERIFICATION
    print("audit ok")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: cannot read config: {exc}\n")
        return EXIT_USAGE

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    client = _Client(args.server if args.server is not None else config.get("server"))
    try:
        handler = {
            "gen-masks": _cmd_gen_masks,
            "certify": _cmd_certify,
            "eval": _cmd_eval,
            "audit": _cmd_audit,
        }[args.command]
        return handler(client, args, config)
    except _CommandError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
