"""HTTP service exposing streaming sessions and batch experiment runs.

A session wraps one private estimator; points are pushed one at a time and
each push returns the current estimate.  Sessions are always private: the
noise switch is not reachable from a session, and a batch run with noise
disabled must carry an explicit acknowledgement.
"""
from __future__ import annotations

import math
import threading
import uuid
from typing import Dict

from fastapi import FastAPI, HTTPException

from . import __version__
from .dp import PrivacyBudget
from .errors import InvalidInput, PrivIncError, StreamExhausted
from .geometry import ConstraintSet, DomainSpec
from .harness import run_experiment, width_sum
from .projected import ProjPrivIncReg, ProjRegConfig
from .regression import PrivIncReg, RegConfig
from .schemas import (EstimateOut, ExperimentConfig, Health, LedgerOut, PointIn, RunRequest,
                      RunResponse, SessionCreate, SessionInfo)


class _Session:
    def __init__(self, sid: str, req: SessionCreate):
        self.id = sid
        self.req = req
        self.lock = threading.Lock()
        C = ConstraintSet(req.constraint.kind, req.constraint.radius, req.d,
                          p=req.constraint.p, k=req.constraint.k)
        budget = PrivacyBudget(req.epsilon, req.delta)
        k = req.constants
        if req.algorithm == "priv_inc_reg":
            self.est = PrivIncReg(req.T, C, budget, beta=req.beta, seed=req.seed,
                                  config=RegConfig(c_alpha=k.c_alpha, r_cap=k.r_cap,
                                                   r_exact=k.r_exact, r=k.r, step=k.step))
        else:
            domain = DomainSpec(req.domain.kind, req.d, k=req.domain.k)
            W = k.W if k.W is not None else width_sum(C, domain, k.width_samples, req.seed)
            self.est = ProjPrivIncReg(req.T, C, budget, W, beta=req.beta, seed=req.seed,
                                      config=ProjRegConfig(c_alpha=k.c_alpha, c_m=k.c_m,
                                                           r_cap=k.r_cap, r_exact=k.r_exact,
                                                           r=k.r, step=k.step, m=k.m,
                                                           m_max=k.m_max or -1,
                                                           lift_every=k.lift_every))

    def info(self) -> SessionInfo:
        params = {k: float(v) for k, v in self.est.params().items()}
        return SessionInfo(session_id=self.id, algorithm=self.req.algorithm, T=self.req.T,
                           d=self.req.d, t=self.est.t, params=params)


def create_app() -> FastAPI:
    app = FastAPI(title="privinc", version=__version__)
    sessions: Dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def get(sid: str) -> _Session:
        with registry_lock:
            s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"no session {sid}")
        return s

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__)

    @app.get("/schema")
    def schema():
        return ExperimentConfig.model_json_schema()

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(req: SessionCreate):
        sid = uuid.uuid4().hex
        try:
            s = _Session(sid, req)
        except PrivIncError as exc:
            raise HTTPException(422, str(exc))
        with registry_lock:
            sessions[sid] = s
        return s.info()

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def session_info(sid: str):
        return get(sid).info()

    @app.delete("/sessions/{sid}", status_code=204)
    def close_session(sid: str):
        with registry_lock:
            if sessions.pop(sid, None) is None:
                raise HTTPException(404, f"no session {sid}")

    @app.post("/sessions/{sid}/points", response_model=EstimateOut)
    def push_point(sid: str, p: PointIn):
        s = get(sid)
        with s.lock:
            try:
                theta = s.est.update(p.x, p.y)
            except StreamExhausted as exc:
                raise HTTPException(409, str(exc))
            except InvalidInput as exc:
                raise HTTPException(422, str(exc))
            return EstimateOut(t=s.est.t, theta=theta.tolist(), remaining=s.est.T - s.est.t)

    @app.get("/sessions/{sid}/ledger", response_model=LedgerOut)
    def ledger(sid: str):
        s = get(sid)
        led = s.est.ledger
        eps, dlt = led.total()
        inter = [{"epsilon": e, "delta": d, "label": lab}
                 for (e, d), lab in zip(led.interactions, led.labels)]
        return LedgerOut(mode=led.mode, noise_free=led.noise_free,
                         epsilon=None if math.isinf(eps) else eps, delta=dlt, interactions=inter)

    @app.post("/runs", response_model=RunResponse)
    def run(req: RunRequest):
        if req.config.noise_disabled and not req.i_understand_this_is_not_private:
            raise HTTPException(403, "noise_disabled runs need i_understand_this_is_not_private")
        try:
            rep = run_experiment(req.config, req.seed)
        except PrivIncError as exc:
            raise HTTPException(422, str(exc))
        return RunResponse(csv=rep.to_csv(), summary=rep.summary())

    return app


app = create_app()
