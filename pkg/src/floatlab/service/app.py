"""HTTP service wrapping the lab: train, eval, sweep, cost, synth, inspect.

All endpoints are synchronous (runs are desk-scale) and operate on paths
visible to the server process.  Lab errors map to a structured body carrying
the error kind (config/data/numeric), which thin clients translate into
distinct exit codes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..costmodel import HwParams, LayerSpec, count_params_flops, delay_table, preset
from ..data import make_synthetic, save_dataset
from ..errors import ConfigError, FloatLabError
from ..runner import eval_checkpoint, inspect_checkpoint, run, sweep
from . import schemas as S

_STATUS = {"config": 400, "data": 422, "numeric": 500, "internal": 500}


def create_app() -> FastAPI:
    app = FastAPI(title="floatlab", version=__version__)

    @app.exception_handler(FloatLabError)
    async def _lab_error(request: Request, exc: FloatLabError):
        body = S.ErrorBody(kind=exc.kind, stage=getattr(exc, "stage", None), message=str(exc))
        return JSONResponse(status_code=_STATUS.get(exc.kind, 500), content={"error": body.model_dump()})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/synth", response_model=S.SynthResponse)
    def synth(req: S.SynthRequest):
        ds = make_synthetic(req.classes, req.per_class, req.channels, req.height, req.width, req.seed)
        os.makedirs(os.path.dirname(os.path.abspath(req.out_path)), exist_ok=True)
        save_dataset(req.out_path, ds)
        with open(req.out_path, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        return S.SynthResponse(
            out_path=req.out_path,
            n_samples=len(ds),
            n_classes=ds.n_classes,
            shape=list(ds.images.shape[1:]),
            sha256=digest,
        )

    @app.post("/train", response_model=S.TrainResponse)
    def train(req: S.TrainRequest):
        result = run(req.config)
        return S.TrainResponse(
            run_id=result.run_id,
            checkpoint_path=result.checkpoint_path,
            metrics_path=result.metrics_path,
            epochs=result.epochs,
            density=result.density,
            history=[S.EpochStats(**h) for h in result.history],
        )

    @app.post("/eval", response_model=S.EvalResponse)
    def eval_(req: S.EvalRequest):
        row = eval_checkpoint(
            req.checkpoint, req.dataset, req.lambda_n, req.lambda_th,
            req.attack, req.epsilon, req.step_size, req.slim_factor, req.seed,
        )
        return S.EvalResponse(
            lambda_n=row["lambda_n"],
            lambda_th=row["lambda_th"],
            ca_percent=row["ca"],
            ra_percent=row["ra"],
            attack_name=row["attack_name"],
            slim_factor=row["slim_factor"],
            params=row["params"],
        )

    @app.post("/sweep", response_model=S.SweepResponse)
    def sweep_(req: S.SweepRequest):
        rows = sweep(
            req.checkpoint, req.dataset, req.lambda_n_set, req.lambda_th,
            req.attacks, req.out_dir, req.epsilon, req.step_size, req.slim_factor, req.seed,
        )
        return S.SweepResponse(
            rows=[
                S.EvalResponse(
                    lambda_n=r["lambda_n"],
                    lambda_th=r["lambda_th"],
                    ca_percent=r["ca"],
                    ra_percent=r["ra"],
                    attack_name=r["attack_name"],
                    slim_factor=r["slim_factor"],
                    params=r["params"],
                )
                for r in rows
            ],
            sweep_metrics_path=os.path.join(req.out_dir, "sweep_metrics.csv"),
            tradeoff_path=os.path.join(req.out_dir, "tradeoff.csv"),
        )

    @app.post("/cost", response_model=S.CostResponse)
    def cost(req: S.CostRequest):
        if (req.preset is None) == (req.layers is None):
            raise ConfigError("provide exactly one of preset or layers")
        if req.preset is not None:
            layers = preset(req.preset)
        else:
            layers = [LayerSpec(**l.model_dump()) for l in req.layers]
        hw = HwParams(**req.hw.model_dump())
        totals = count_params_flops(layers, req.variant)
        rows = delay_table(layers, hw)
        max_ratio = max((r["oat_over_float"] for r in rows), default=0.0)
        csv_path = json_path = None
        if req.csv_path:
            os.makedirs(os.path.dirname(os.path.abspath(req.csv_path)), exist_ok=True)
            with open(req.csv_path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["name", "k", "c_in", "c_out", "h_out", "w_out",
                            "conv_ns", "float_ns", "oat_ns", "oat_over_float"])
                for r in rows:
                    w.writerow([r["name"], r["k"], r["c_in"], r["c_out"], r["h_out"], r["w_out"],
                                f"{r['conv_ns']:.6f}", f"{r['float_ns']:.6f}", f"{r['oat_ns']:.6f}",
                                f"{r['oat_over_float']:.9f}"])
            csv_path = req.csv_path
        payload = {
            **totals,
            "noise_overhead_pct": 100.0 * totals["noise_add_ops"] / totals["flops"],
            "max_oat_over_float": max_ratio,
        }
        if req.json_path:
            os.makedirs(os.path.dirname(os.path.abspath(req.json_path)), exist_ok=True)
            with open(req.json_path, "w") as f:
                json.dump(payload, f, sort_keys=True, separators=(",", ":"))
            json_path = req.json_path
        return S.CostResponse(
            **payload,
            delays=[S.DelayRow(**r) for r in rows],
            csv_path=csv_path,
            json_path=json_path,
        )

    @app.post("/inspect", response_model=S.InspectResponse)
    def inspect(req: S.InspectRequest):
        report = inspect_checkpoint(req.checkpoint)
        report.pop("bn_batches", None)
        return S.InspectResponse(**report)

    return app
