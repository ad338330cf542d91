"""The protocol loop: handshake on stdout, then newline-delimited JSON
requests answered in arrival order.

Masked pixels are zeroized before the model sees the image (whatever the
client sent under the mask), and the mask travels as the model's mask
channel, so model output cannot depend on masked content. Per-request
failures become status=error responses; only a model that fails to load
refuses the handshake.
"""

from __future__ import annotations

import json
import sys


def _respond(stream, payload: dict) -> None:
    stream.write(json.dumps(payload) + "\n")
    stream.flush()


def handle_request(req: dict, model) -> dict:
    from . import formats

    rid = req.get("id")
    op = req.get("op")
    try:
        if op == "demask":
            image = formats.read_image(req["image"])
            if not req.get("mask"):
                raise ValueError("demask request carries no mask")
            visible = formats.read_mask(req["mask"])
            if visible.shape != image.shape[:2]:
                raise ValueError(
                    f"mask {visible.shape} does not match image {image.shape[:2]}"
                )
            image = image * visible[:, :, None]  # zeroize before the model
            out = model.demask(image, visible)
            if out.shape[:2] != image.shape[:2]:
                raise ValueError("model returned wrong demask dimensions")
            formats.write_image(req["out"], out)
        elif op == "segment":
            image = formats.read_image(req["image"])
            labels = model.segment(image)
            if labels.shape != image.shape[:2]:
                raise ValueError("model returned wrong label dimensions")
            if labels.min(initial=0) < 0 or labels.max(initial=0) >= model.num_classes:
                raise ValueError("model returned labels outside the class range")
            formats.write_labels(req["out"], labels, model.num_classes)
        else:
            return {"id": rid, "status": "error", "message": f"unknown op {op!r}"}
        return {"id": rid, "status": "ok"}
    except Exception as exc:  # noqa: BLE001 - every failure maps to a response
        return {"id": rid, "status": "error", "message": str(exc)}


def serve(model, max_inflight: int = 1, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    _respond(
        stdout,
        {
            "protocol": 1,
            "num_classes": int(model.num_classes),
            "max_inflight": int(max_inflight),
            "deterministic": bool(model.deterministic),
        },
    )
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            _respond(stdout, {"id": None, "status": "error", "message": "bad request line"})
            continue
        _respond(stdout, handle_request(req, model))
    return 0
