"""HTTP face of the engine.

The service wraps the path-level pipeline jobs: clients name files inside a
workspace the server can reach (the CLI runs the app in-process by default,
so paths are simply local). Responses carry the same payloads the pipeline
returns; failures map to a structured ``{"code", "message"}`` detail.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .errors import PatchCertError

_STATUS_BY_CODE = {"usage": 400, "verification": 422, "backend": 502, "internal": 500}


class HealthResponse(BaseModel):
    status: str
    version: str


class GenMasksRequest(BaseModel):
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    scheme: str
    out_dir: str
    k: int | None = None
    patch_frac: float | None = None
    patch_h: int | None = None
    patch_w: int | None = None
    mask_width: int | None = None


class GenMasksResponse(BaseModel):
    scheme: str
    kind: str
    k: int
    patch_height: int
    patch_width: int
    out_dir: str
    notes: list[str] = []
    declared_strength: int | None = None
    computed_strength: int | None = None
    block_uniqueness: bool | None = None
    coverage_verified: bool | None = None
    detection_extent: int | None = None


class CertifyRequest(BaseModel):
    image: str
    masks_dir: str
    mode: str
    out_dir: str
    backend: str = "toy"
    n_patches: int = Field(default=1, ge=1)
    colorize: bool = False
    jobs: int = Field(default=1, ge=1)
    allow_nondeterministic: bool = False


class ImageResult(BaseModel):
    image: str
    out_dir: str
    mode: str
    certified_fraction: float


class CertifyResponse(BaseModel):
    images: list[ImageResult]
    count: int


class EvalRequest(BaseModel):
    pred_dir: str
    gt_dir: str
    num_classes: int = Field(ge=1)
    cert_dir: str | None = None
    big_threshold: float = 0.20
    ignore_label: int | None = None
    out_path: str | None = None


class EvalResponse(BaseModel):
    report: dict
    out_path: str | None = None


class AuditRequest(BaseModel):
    masks_dir: str
    image: str | None = None
    out_path: str | None = None
    seed: int = 0
    num_random: int = Field(default=8, ge=1)
    soundness_random: int = Field(default=4, ge=1)
    attack_budget: int = Field(default=0, ge=0)
    n_patches: int = Field(default=1, ge=1)


class AuditResponse(BaseModel):
    report: dict
    ok: bool


def create_app() -> FastAPI:
    app = FastAPI(title="patchcert", version=__version__)

    @app.exception_handler(PatchCertError)
    @app.exception_handler(FileNotFoundError)
    @app.exception_handler(NotADirectoryError)
    @app.exception_handler(ValueError)
    async def _engine_error(request: Request, exc: Exception):
        code = pipeline.error_code(exc)
        return JSONResponse(
            status_code=_STATUS_BY_CODE[code],
            content={"detail": {"code": code, "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/masksets", response_model=GenMasksResponse)
    def gen_masks(req: GenMasksRequest):
        info = pipeline.run_gen_masks(
            height=req.height,
            width=req.width,
            scheme=req.scheme,
            out_dir=req.out_dir,
            k=req.k,
            patch_frac=req.patch_frac,
            patch_h=req.patch_h,
            patch_w=req.patch_w,
            mask_width=req.mask_width,
        )
        return GenMasksResponse(**info)

    @app.post("/certify", response_model=CertifyResponse)
    def certify(req: CertifyRequest):
        result = pipeline.run_certify(
            image=req.image,
            masks_dir=req.masks_dir,
            mode=req.mode,
            backend=req.backend,
            n_patches=req.n_patches,
            out_dir=req.out_dir,
            colorize=req.colorize,
            jobs=req.jobs,
            allow_nondeterministic=req.allow_nondeterministic,
        )
        return CertifyResponse(**result)

    @app.post("/evaluate", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        report = pipeline.run_eval(
            pred_dir=req.pred_dir,
            gt_dir=req.gt_dir,
            num_classes=req.num_classes,
            cert_dir=req.cert_dir,
            big_threshold=req.big_threshold,
            ignore_label=req.ignore_label,
            out_path=req.out_path,
        )
        return EvalResponse(report=report, out_path=req.out_path)

    @app.post("/audit", response_model=AuditResponse)
    def audit(req: AuditRequest):
        report = pipeline.run_audit(
            masks_dir=req.masks_dir,
            image_path=req.image,
            out_path=req.out_path,
            seed=req.seed,
            num_random=req.num_random,
            soundness_random=req.soundness_random,
            attack_budget=req.attack_budget,
            n_patches=req.n_patches,
        )
        return AuditResponse(report=report, ok=report["ok"])

    return app


app = create_app()
