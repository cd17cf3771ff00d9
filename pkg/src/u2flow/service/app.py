"""FastAPI service wrapping the lab.

The service owns no global state beyond an in-memory run registry; every run
is fully materialized on disk, so analysis endpoints also work against
directories produced by other service instances. Paths in requests are
interpreted on the machine running the service.
"""

from __future__ import annotations

import dataclasses
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__, blowup, evolution, io_formats
from ..certificates import RefutedError, certify_paper_polynomials
from ..flow import FlowConfig, Trajectory, detect_singularity, run as run_flow
from ..ftheta import quadratic_positive_check, solve_ftheta
from ..io_formats import (ConfigError, flow_config_from_text, flow_config_to_text,
                          json_dumps, load_trajectory, write_manifest, write_trajectory)
from ..reference import integrate_eh, integrate_soliton, soliton_potential_asymptotics
from .schemas import (AnalyzeRequest, AnalyzeResponse, CertifyRequest, CertifyResponse,
                      EHRequest, EHResponse, HealthResponse, RunRequest, RunResponse,
                      SolitonRequest, SolitonResponse)


def create_app() -> FastAPI:
    app = FastAPI(title="u2flow lab service", version=__version__)
    runs: dict[str, str] = {}

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/runs", response_model=RunResponse)
    def start_run(req: RunRequest):
        try:
            if req.config_text is not None:
                cfg = flow_config_from_text(req.config_text)
            elif req.config is not None:
                cfg = FlowConfig(**req.config)
                cfg.validate()
            else:
                raise ConfigError("need config or config_text")
        except (ConfigError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        out_dir = Path(req.out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            probe = out_dir / ".writable"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise HTTPException(status_code=403, detail=f"output directory not writable: {exc}")
        started = io_formats.now()
        traj = run_flow(cfg)
        files = write_trajectory(traj, out_dir)
        write_manifest(out_dir, flow_config_to_text(cfg), files, started, io_formats.now())
        run_id = uuid.uuid4().hex[:12]
        runs[run_id] = str(out_dir)
        return RunResponse(
            run_id=run_id,
            out_dir=str(out_dir),
            stop_reason=traj.stop_reason,
            t_end=float(traj.times[-1]),
            t_sing=traj.t_sing,
            t_sing_sigma=traj.t_sing_sigma,
            b_tip_final=float(traj.b_tip[-1]),
            n_snapshots=len(traj.snapshots),
            class_i_member=bool(traj.class_i.get("member", False)),
            boundary_contaminated=traj.boundary_contaminated,
            margin_minima={k: {kk: float(vv) for kk, vv in v.items()}
                           for k, v in traj.margin_minima.items()},
            files=[f.name for f in files],
        )

    @app.get("/runs/{run_id}/files/{name}", response_class=PlainTextResponse)
    def run_file(run_id: str, name: str):
        base = runs.get(run_id)
        if base is None:
            raise HTTPException(status_code=404, detail="unknown run id")
        path = Path(base) / name
        if not path.exists() or path.parent != Path(base):
            raise HTTPException(status_code=404, detail="no such file")
        return path.read_text()

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(req: AnalyzeRequest):
        tdir = Path(req.trajectory_dir)
        if not tdir.exists():
            raise HTTPException(status_code=404, detail=f"no trajectory at {tdir}")
        try:
            traj = load_trajectory(tdir)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return _analyze(traj, req)

    @app.post("/certify", response_model=CertifyResponse)
    def certify(req: CertifyRequest):
        try:
            reports = certify_paper_polynomials(req.lattice_resolution)
            verified = True
        except RefutedError as exc:
            reports = [exc.report]
            verified = False
        quad = []
        for theta in req.theta_ladder:
            sol = solve_ftheta(float(theta))
            quad.append(quadratic_positive_check(sol).to_dict())
        files = []
        if req.out_dir:
            out = Path(req.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            p = out / "certificates.json"
            p.write_text(json_dumps({
                "all_exact_verified": verified,
                "reports": [r.to_dict() for r in reports],
                "quadratic_reports": quad,
            }))
            files.append(p.name)
        return CertifyResponse(
            all_exact_verified=verified and all(q["verdict"] == "verified" for q in quad),
            n_claims=len(reports),
            reports=[r.to_dict() for r in reports],
            quadratic_reports=quad,
            files=files,
        )

    @app.post("/eh", response_model=EHResponse)
    def eh(req: EHRequest):
        if req.s_max <= 0 or req.ds <= 0:
            raise HTTPException(status_code=422, detail="s_max and ds must be positive")
        prof = integrate_eh(req.s_max, req.ds)
        Q = prof.Q
        a_s = 2.0 - Q**2
        b_s = Q
        # deviation fields measured from the samples, not from the defining system
        a_s_num = np.gradient(prof.a, prof.s)
        b_s_num = np.gradient(prof.b, prof.s)
        x = a_s_num + Q**2 - 2.0
        y = b_s_num - Q
        files = []
        if req.out_dir:
            out = Path(req.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            p = out / "eh_profile.csv"
            p.write_text(prof.to_csv())
            files.append(p.name)
        return EHResponse(
            s_max=prof.s_max,
            a_s_final=float(a_s[-1]),
            b_s_final=float(b_s[-1]),
            a_over_s_final=float(prof.a[-1] / prof.s[-1]),
            b_over_s_final=float(prof.b[-1] / prof.s[-1]),
            max_abs_x=float(np.max(np.abs(x[1:-1]))),
            max_abs_y=float(np.max(np.abs(y[1:-1]))),
            files=files,
        )

    @app.post("/soliton", response_model=SolitonResponse)
    def soliton(req: SolitonRequest):
        if req.rho < 0:
            raise HTTPException(status_code=422, detail="expanding case (rho < 0) is out of scope")
        if any(b <= 0 for b in req.b0) or req.s_max <= 0:
            raise HTTPException(status_code=422, detail="b0 and s_max must be positive")
        out = Path(req.out_dir) if req.out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        results = []
        files = []
        for b0 in req.b0:
            st = integrate_soliton(req.k, float(b0), req.rho, req.s_max)
            rec = st.violation_report()
            rec["diagnostics"] = st.diagnostics
            if st.violation is None:
                rec["potential_fit"] = soliton_potential_asymptotics(st)
            results.append(rec)
            if out:
                tag = f"rho{req.rho:g}_b0{b0:g}".replace(".", "p")
                p = out / f"soliton_{tag}.csv"
                p.write_text(st.to_csv())
                v = out / f"soliton_{tag}_violation.json"
                v.write_text(st.violation_json() + "\n")
                files += [p.name, v.name]
        return SolitonResponse(runs=results, files=files)

    return app


def _analyze(traj: Trajectory, req: AnalyzeRequest) -> AnalyzeResponse:
    sing = detect_singularity(traj).to_dict() if traj.stop_reason == "singularity" else {
        "verdict": "no_singularity"}
    margins = evolution.inequality_monitor(traj, req.tol_ineq)
    curv = evolution.curvature_bound_monitor(traj)
    curv_out = {"max_after_transient": curv["max_after_transient"],
                "C1_first": float(curv["C1"][0]), "C1_last": float(curv["C1"][-1])}

    eh_series = []
    if traj.stop_reason == "singularity":
        for lvl in req.eh_levels:
            snap = traj.snapshot_near_btip(lvl)
            prof = blowup.rescale(snap, "tip")
            sx, sy = blowup.eh_distance(prof, req.eh_window)
            eh_series.append({"level": lvl, "b_tip": float(snap.b[0]), "t": snap.t,
                              "sup_x": sx, "sup_y": sy})
        track = blowup.TrackSpec("node", 0) if req.track == "tip" else blowup.TrackSpec(
            "s_value", float(req.track))
        blow = blowup.classify(traj, track, req.eh_window).to_dict()
    else:
        blow = {"regime": "no_singularity"}

    residuals = []
    if req.residual_laws:
        ft = solve_ftheta(req.theta) if traj.k == 2 else None
        window = (float(traj.times[0]), float(traj.times[-1]))
        for name in req.residual_laws:
            law = evolution.law_by_name(name, ft)
            rep = evolution.evolution_residual(law, traj, window, ft)
            residuals.append(rep.to_dict())

    files = []
    if req.out_dir:
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p = out / "analysis.json"
        p.write_text(json_dumps({
            "singularity": sing,
            "inequality_margins": margins,
            "curvature_bound": curv_out,
            "blowup": blow,
            "eh_distance": eh_series,
            "residuals": residuals,
        }))
        files.append(p.name)
    return AnalyzeResponse(
        singularity=sing, inequality_margins=margins, curvature_bound=curv_out,
        blowup=blow, eh_distance=eh_series, residuals=residuals, files=files,
    )
