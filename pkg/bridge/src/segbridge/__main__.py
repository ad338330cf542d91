"""Entry point: ``python -m segbridge serve --model stub``.

A JSON config file (--config) can name the model, weights path, device,
seed and resize policy; explicit flags win. Model load failures are
reported on stderr and exit nonzero before any handshake is sent.
"""

from __future__ import annotations

import argparse
import json
import sys

from .models import ResizeWrapper, load_model
from .server import serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segbridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="answer protocol requests on stdio")
    p.add_argument("--model", default=None,
                   help="stub | nearest | import:<module>:<factory>")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--max-inflight", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--device", default=None)
    p.add_argument("--resize", type=int, default=None,
                   help="run the model at a fixed side length, restore output size")
    p.add_argument("--config", default=None, help="JSON file with the same keys")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            sys.stderr.write(f"segbridge: cannot read config: {exc}\n")
            return 2

    def pick(key, default):
        val = getattr(args, key.replace("-", "_"))
        if val is not None:
            return val
        return config.get(key, default)

    model_spec = pick("model", "stub")
    num_classes = int(pick("num-classes", 3))
    max_inflight = int(pick("max-inflight", 1))
    resize = pick("resize", None)
    try:
        model = load_model(
            model_spec,
            num_classes=num_classes,
            seed=pick("seed", None),
            weights=pick("weights", None),
            device=pick("device", None),
        )
        if resize:
            model = ResizeWrapper(model, int(resize))
    except Exception as exc:  # noqa: BLE001 - refuse the handshake
        sys.stderr.write(f"segbridge: model load failed: {exc}\n")
        return 2
    sys.stderr.write(
        f"segbridge: serving model={model_spec} num_classes={num_classes} "
        f"resize={resize or 'native'}\n"
    )
    return serve(model, max_inflight=max_inflight)


if __name__ == "__main__":
    sys.exit(main())
