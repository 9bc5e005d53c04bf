"""
HTTP scoring service. Response bodies are canonical JSON, so a trainer gets exactly the bytes the
library would produce for the same call.
"""
from __future__ import annotations

import json
from functools import partial
from typing import Any, Callable

import anyio
import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import Response
from pydantic import BaseModel, Field, ValidationError

from .__version__ import VERSION
from .backends import Backends, build_backends
from .constants import VERSION_HEADER
from .dataset import instance_from_dict
from .domain import ActionList, Instance
from .errors import BackendError, ComponentError, ConfigError, DatasetError, InputError, R2ifError
from .grpo import group_normalize
from .harness import ace
from .log import log
from .models import RewardConfig, ServiceConfig
from .parser import RejectionMarker, ToolPayload, parse_answer_doc, parse_response
from .reward import VBaseCache, cer, composite_reward
from .serializer import canonical_json


class ParseRequest(BaseModel):
    response: str


class ScoreOptions(BaseModel):
    enable_cer: bool = True
    enable_smv: bool = True
    reward: dict[str, Any] = Field(default_factory=dict)


class ScoreRequest(BaseModel):
    instance: dict[str, Any]
    responses: list[str]
    options: ScoreOptions = Field(default_factory=ScoreOptions)


class AcePair(BaseModel):
    instance: dict[str, Any]
    reason_text: str


class AceOptions(BaseModel):
    reward: dict[str, Any] = Field(default_factory=dict)


class AceRequest(BaseModel):
    pairs: list[AcePair]
    options: AceOptions = Field(default_factory=AceOptions)


class HttpError(Exception):
    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body


def payload_to_json(p: ToolPayload) -> dict:
    if isinstance(p, ActionList):
        return {'kind': 'actions', 'calls': p.to_json()}
    if isinstance(p, RejectionMarker):
        return {'kind': 'rejection', 'raw_text': p.raw_text}
    return {'kind': 'parse_failure', 'reason': p.reason, 'offset': p.offset, 'error_offset': p.error_offset}


def parse_body(response: str) -> dict:
    parsed = parse_response(response)
    return {
        'format_valid': parsed.format_valid,
        'reason_text': parsed.reason_text,
        'tool_payload': payload_to_json(parsed.tool_payload),
        'violations': list(parsed.violations),
        'answer_doc': parse_answer_doc(parsed.reason_text),
    }


def score_body(instance: Instance, responses: list[str], backends: Backends | None, cfg: RewardConfig,
               enable_cer: bool = True, enable_smv: bool = True, cache: VBaseCache | None = None) -> dict:
    """
    Score a rollout group: one breakdown per response, plus group-normalized advantages when there
    are at least two responses
    """
    breakdowns = [composite_reward(r, instance, backends, cfg, enable_cer, enable_smv, cache) for r in responses]
    body: dict[str, Any] = {'breakdowns': breakdowns}
    if len(breakdowns) >= 2:
        body['advantages'] = group_normalize([b.total for b in breakdowns], cfg.eta)
    return body


def ace_body(pairs: list[tuple[Instance, str]], backends: Backends | None, cfg: RewardConfig,
             cache: VBaseCache | None = None) -> dict:
    student = backends.student if backends else None
    estimates = [cer(reason, inst, student, cfg, cache) for inst, reason in pairs]
    return {'ace': ace(estimates), 'per_instance': estimates}


def error_response(e: Exception) -> HttpError:
    """
    Map library errors onto status codes; component failures are unwrapped to their cause
    """
    cause = e.cause if isinstance(e, ComponentError) else e
    if isinstance(cause, BackendError):
        return HttpError(502, {'error': str(cause), 'component': cause.component})
    if isinstance(cause, DatasetError):
        return HttpError(422, {'error': str(cause), 'field': cause.field})
    if isinstance(cause, (ConfigError, InputError)):
        return HttpError(400, {'error': str(cause)})
    return HttpError(500, {'error': str(cause)})


def create_app(config: ServiceConfig = ServiceConfig(), backends: Backends | None = None,
               cache: VBaseCache | None = None) -> FastAPI:
    """
    Build the scoring app

    :param backends: Backends to score with; built from config.backends when omitted
    :param cache: v_base cache shared by all requests of this app
    """
    if backends is None:
        backends = build_backends(config.backends)
    cache = cache or VBaseCache()
    app = FastAPI(title='r2if-kit scoring service', version=VERSION)
    app.state.limiter = None

    def respond(body: Any, status: int = 200) -> Response:
        return Response(canonical_json(body), status, media_type='application/json')

    async def read(request: Request, model: type[BaseModel]) -> BaseModel:
        declared = request.headers.get('content-length')
        if declared and declared.isdigit() and int(declared) > config.max_body_bytes:
            raise HttpError(413, {'error': f'body exceeds {config.max_body_bytes} bytes'})
        raw = await request.body()
        if len(raw) > config.max_body_bytes:
            raise HttpError(413, {'error': f'body exceeds {config.max_body_bytes} bytes'})
        try:
            return model.model_validate(json.loads(raw))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise HttpError(400, {'error': f'malformed JSON body: {e}'})
        except ValidationError as e:
            raise HttpError(400, {'error': 'invalid request', 'details': json.loads(e.json())})

    async def run(fn: Callable[[], Any]) -> Any:
        if app.state.limiter is None:
            app.state.limiter = anyio.CapacityLimiter(config.concurrency)
        try:
            return await anyio.to_thread.run_sync(fn, limiter=app.state.limiter)
        except R2ifError as e:
            raise error_response(e)

    def reward_cfg(overrides: dict) -> RewardConfig:
        try:
            return config.reward.replace(**overrides)
        except TypeError as e:
            raise HttpError(400, {'error': f'unknown reward option: {e}'})
        except ConfigError as e:
            raise HttpError(400, {'error': str(e)})

    def instance(d: dict) -> Instance:
        try:
            return instance_from_dict(d)
        except DatasetError as e:
            raise HttpError(422, {'error': str(e), 'field': e.field})

    @app.exception_handler(HttpError)
    async def http_error(request: Request, e: HttpError):
        return respond(e.body, e.status)

    @app.middleware('http')
    async def version_header(request: Request, call_next):
        res = await call_next(request)
        res.headers[VERSION_HEADER] = VERSION
        return res

    @app.post('/v1/parse')
    async def parse(request: Request):
        req = await read(request, ParseRequest)
        return respond(parse_body(req.response))

    @app.post('/v1/score')
    async def score(request: Request):
        req = await read(request, ScoreRequest)
        if not req.responses:
            raise HttpError(400, {'error': 'responses must not be empty'})
        if len(req.responses) > config.max_responses:
            raise HttpError(413, {'error': f'at most {config.max_responses} responses per request'})
        cfg = reward_cfg(req.options.reward)
        inst = instance(req.instance)
        body = await run(partial(score_body, inst, req.responses, backends, cfg,
                                 req.options.enable_cer, req.options.enable_smv, cache))
        return respond(body)

    @app.post('/v1/ace')
    async def ace_endpoint(request: Request):
        req = await read(request, AceRequest)
        if not req.pairs:
            raise HttpError(400, {'error': 'pairs must not be empty'})
        if len(req.pairs) > config.max_responses:
            raise HttpError(413, {'error': f'at most {config.max_responses} pairs per request'})
        cfg = reward_cfg(req.options.reward)
        pairs = [(instance(p.instance), p.reason_text) for p in req.pairs]
        return respond(await run(partial(ace_body, pairs, backends, cfg, cache)))

    @app.get('/healthz')
    async def healthz():
        status = await anyio.to_thread.run_sync(backends.ping)
        ok = all(status.values())
        return respond({'status': 'ok' if ok else 'degraded', 'version': VERSION, 'backends': status},
                       200 if ok else 503)

    return app


def serve(config: ServiceConfig):
    """
    Run the service with uvicorn until interrupted
    """
    app = create_app(config)
    log.info(f'Serving r2if-kit {VERSION} on http://{config.host}:{config.port}')
    uvicorn.run(app, host=config.host, port=config.port, log_level='info')
