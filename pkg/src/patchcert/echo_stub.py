"""Echo backend stub for protocol conformance testing.

Speaks the stdio wire protocol: demask requests are answered by copying the
masked image unchanged (the identity reconstruction), segment requests by a
constant all-zero map. Fault-injection flags let the test suite exercise
the engine's error paths:

  --wrong-dims        outputs are cropped by one row (dimension-check test)
  --fail-op OP        every OP request gets a status=error response
  --shuffle N         buffer N responses, release them in reverse order
  --garble            emit a non-JSON line instead of the first response
  --report-inflight   print {"max_observed_inflight": n} to stderr at EOF

Run as ``python -m patchcert.echo_stub``.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import imageio
from .grid import SegMap


def _respond(line: str) -> None:
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def _handle(req: dict, args) -> str:
    rid = req.get("id")
    op = req.get("op")
    try:
        if op == args.fail_op:
            return json.dumps({"id": rid, "status": "error", "message": f"injected failure for {op}"})
        if op == "demask":
            image = imageio.read_png(req["image"])
            if args.wrong_dims:
                image = type(image)._wrap(image.data[:-1].copy())
            imageio.write_png(req["out"], image)
        elif op == "segment":
            image = imageio.read_png(req["image"])
            h = image.height - 1 if args.wrong_dims else image.height
            labels = np.zeros((h, image.width), dtype=np.int32)
            imageio.write_segmap(
                req["out"], SegMap(labels, args.num_classes)
            )
        else:
            return json.dumps({"id": rid, "status": "error", "message": f"unknown op {op!r}"})
        return json.dumps({"id": rid, "status": "ok"})
    except Exception as exc:  # noqa: BLE001 - report, never crash the stream
        return json.dumps({"id": rid, "status": "error", "message": str(exc)})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-classes", type=int, default=3)
    parser.add_argument("--max-inflight", type=int, default=1)
    parser.add_argument("--nondeterministic", action="store_true")
    parser.add_argument("--wrong-dims", action="store_true")
    parser.add_argument("--fail-op", default=None)
    parser.add_argument("--shuffle", type=int, default=0, metavar="N")
    parser.add_argument("--garble", action="store_true")
    parser.add_argument("--report-inflight", action="store_true")
    args = parser.parse_args(argv)

    _respond(
        json.dumps(
            {
                "protocol": 1,
                "num_classes": args.num_classes,
                "max_inflight": args.max_inflight,
                "deterministic": not args.nondeterministic,
            }
        )
    )

    inflight = 0
    max_inflight_seen = 0
    buffer: list[str] = []
    garbled = False
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            _respond(json.dumps({"id": None, "status": "error", "message": "bad request"}))
            continue
        inflight += 1
        max_inflight_seen = max(max_inflight_seen, inflight)
        if args.garble and not garbled:
            garbled = True
            _respond("this is not json")
            inflight -= 1
            continue
        response = _handle(req, args)
        if args.shuffle > 0:
            buffer.append(response)
            if len(buffer) >= args.shuffle:
                for resp in reversed(buffer):
                    _respond(resp)
                    inflight -= 1
                buffer.clear()
        else:
            _respond(response)
            inflight -= 1
    for resp in reversed(buffer):
        _respond(resp)
    if args.report_inflight:
        sys.stderr.write(json.dumps({"max_observed_inflight": max_inflight_seen}) + "\n")
        sys.stderr.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
