"""Newline-delimited JSON request dispatch.

A request is ``{"id": int, "method": str, "params": {...}}``; the response
echoes ``id`` and carries exactly one of ``result`` or ``error``. Every method
is a thin adapter over the matching library call.
"""

from __future__ import annotations

import json
import math
import os
from functools import lru_cache

from .. import sensors, workspace
from ..errors import InvalidParamsError, KinesimError
from ..simcore import Pose2D, Registry, parse_static_body
from ..urdf import load_model, parse_urdf, resolve_model_path

MAX_LINE = 1 << 20

INVALID_PARAMS = 400
UNKNOWN_ENTITY = 404
METHOD_NOT_FOUND = 405
INVALID_STATE = 409
INTERNAL = 500


class _Missing(InvalidParamsError):
    pass


def _get(params: dict, key: str, default=_Missing):
    if key in params:
        return params[key]
    if default is _Missing:
        raise _Missing(f"missing parameter {key!r}")
    return default


def _int(params, key, default=_Missing) -> int:
    v = _get(params, key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidParamsError(f"{key!r} must be an integer, got {v!r}")
    return v


def _float(params, key, default=_Missing) -> float:
    v = _get(params, key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InvalidParamsError(f"{key!r} must be a number, got {v!r}")
    return float(v)


def _str_list(params, key) -> list:
    v = _get(params, key)
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
        raise InvalidParamsError(f"{key!r} must be a list of strings")
    return v


@lru_cache(maxsize=32)
def _cached_model(path: str, mtime_ns: int):
    return load_model(path)


def _model(params):
    if "urdf" in params:
        text = params["urdf"]
        if not isinstance(text, str):
            raise InvalidParamsError("'urdf' must be URDF text")
        return parse_urdf(text)
    source = _get(params, "model")
    if not isinstance(source, str):
        raise InvalidParamsError("'model' must be a bundled model name or a path")
    path = resolve_model_path(source)
    return _cached_model(str(path), os.stat(path).st_mtime_ns)


def _pose2d(value) -> Pose2D:
    if value is None:
        return Pose2D(0.0, 0.0, 0.0)
    if isinstance(value, dict):
        value = [value.get("x", 0.0), value.get("y", 0.0), value.get("theta", 0.0)]
    if not isinstance(value, list) or len(value) != 3 or \
            not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise InvalidParamsError("base_pose must be [x, y, theta] or {x, y, theta}")
    return Pose2D(*(float(v) for v in value))


def _finite(x):
    return x if math.isfinite(x) else None


class Dispatcher:
    """Maps method names to handlers bound to one registry."""

    def __init__(self, registry: Registry):
        self.registry = registry

    def _instance(self, params):
        return self.registry.get(_int(params, "instance"))

    # -- simcore -------------------------------------------------------

    def create_instance(self, params):
        return {"instance": self.registry.create_instance(params)}

    def reset_instance(self, params):
        self.registry.reset_instance(_int(params, "instance"))
        return {"ok": True}

    def stop_instance(self, params):
        self.registry.stop_instance(_int(params, "instance"))
        return {"ok": True}

    def spawn_robot(self, params):
        inst = self._instance(params)
        model = _model(params)
        return {"robot": inst.spawn_robot(model, _pose2d(params.get("base_pose")))}

    def remove_robot(self, params):
        self._instance(params).remove_robot(_int(params, "robot"))
        return {"ok": True}

    def add_static_body(self, params):
        inst = self._instance(params)
        shape, T = parse_static_body(params)
        return {"body": inst.add_static_body(shape, T)}

    def step(self, params):
        inst = self._instance(params)
        with inst.lock:
            inst.step(_int(params, "n_steps", 1))
            return {"step_count": inst.step_count, "clock": inst.clock}

    def set_angles(self, params):
        names = _str_list(params, "names")
        targets = params.get("angles", params.get("targets"))
        if isinstance(targets, (int, float)) and not isinstance(targets, bool):
            targets = [targets]
        if not isinstance(targets, list) or not all(
                isinstance(t, (int, float)) and not isinstance(t, bool) for t in targets):
            raise InvalidParamsError("'angles' must be a list of numbers")
        self._instance(params).set_angles(_int(params, "robot"), names, targets,
                                          _float(params, "fraction_max_speed"))
        return {"ok": True}

    def get_angles(self, params):
        return {"angles": self._instance(params).get_angles(_int(params, "robot"), _str_list(params, "names"))}

    def go_to_posture(self, params):
        posture = _get(params, "posture")
        if not isinstance(posture, str):
            raise InvalidParamsError("'posture' must be a string")
        self._instance(params).go_to_posture(_int(params, "robot"), posture,
                                             _float(params, "fraction_max_speed"))
        return {"ok": True}

    def joint_commands_done(self, params):
        return {"done": self._instance(params).joint_commands_done(_int(params, "robot"))}

    def move(self, params):
        self._instance(params).move(_int(params, "robot"), _float(params, "vx", 0.0),
                                    _float(params, "vy", 0.0), _float(params, "wz", 0.0))
        return {"ok": True}

    def move_to(self, params):
        self._instance(params).move_to(_int(params, "robot"), _float(params, "x"), _float(params, "y"),
                                       _float(params, "theta"))
        return {"ok": True}

    def base_command_done(self, params):
        return {"done": self._instance(params).base_command_done(_int(params, "robot"))}

    def get_odometry(self, params):
        pose = self._instance(params).get_odometry(_int(params, "robot"))
        return {"x": pose.x, "y": pose.y, "theta": pose.theta}

    def get_state_digest(self, params):
        inst = self._instance(params)
        with inst.lock:
            return {"digest": inst.digest(), "step_count": inst.step_count}

    # -- sensors / collision -----------------------------------------

    def get_laser_scan(self, params):
        laser = _get(params, "laser", "front")
        if not isinstance(laser, str):
            raise InvalidParamsError("'laser' must be a string")
        scan = sensors.get_laser_scan(self._instance(params), _int(params, "robot"), laser)
        return scan.to_dict()

    def get_depth_image(self, params):
        camera = _get(params, "camera", "depth")
        if not isinstance(camera, str):
            raise InvalidParamsError("'camera' must be a string")
        resolution = _get(params, "resolution", "320x240")
        if not isinstance(resolution, (str, list)):
            raise InvalidParamsError("'resolution' must be 'WxH' or [W, H]")
        img = sensors.get_depth_image(self._instance(params), _int(params, "robot"), camera, resolution)
        return img.to_dict()

    def world_collision(self, params):
        contacts = self._instance(params).world_collision(_int(params, "robot"), _str_list(params, "links"))
        return {"contacts": [c.to_dict() for c in contacts]}

    # -- workspace -----------------------------------------------------

    def sample_workspace(self, params):
        model = _model(params)
        chain = _get(params, "chain")
        if isinstance(chain, str):
            chain = chain.split(",")
        if not isinstance(chain, list) or len(chain) != 2 or not all(isinstance(c, str) for c in chain):
            raise InvalidParamsError("'chain' must be 'base,tip' or [base, tip]")
        mode = _get(params, "mode", "full_6")
        if not isinstance(mode, str):
            raise InvalidParamsError("'mode' must be a string")
        cloud = workspace.sample_workspace(
            model, tuple(chain), _int(params, "per_instance"), _int(params, "instances"),
            _int(params, "seed", 0), mode=mode, workers=_int(params, "workers", 1))
        cloud = workspace.normalize_workspace(cloud)
        out = {
            "count": len(cloud),
            "w_raw_max": float(cloud.w_raw.max()),
            "w_norm_min": float(cloud.w_norm.min()),
            "provenance": cloud.provenance,
        }
        if params.get("include_samples", False):
            out["samples"] = [
                {"position": [float(v) for v in p], "q": [float(v) for v in q], "w_raw": float(w), "w_norm": float(n)}
                for p, q, w, n in zip(cloud.positions, cloud.q, cloud.w_raw, cloud.w_norm)
            ]
        return out


METHODS = frozenset(
    name for name in vars(Dispatcher) if not name.startswith("_")
)


def _error(req_id, code: int, message: str) -> dict:
    return {"id": req_id, "error": {"code": code, "message": message}}


def handle_request(request, registry: Registry) -> dict:
    """Dispatch one request (dict, JSON text or bytes) and return the response dict."""
    if isinstance(request, (bytes, bytearray)):
        if len(request) > MAX_LINE:
            return _error(None, INVALID_PARAMS, "request too large")
        try:
            request = request.decode("utf-8")
        except UnicodeDecodeError:
            return _error(None, INVALID_PARAMS, "request is not valid UTF-8")
    if isinstance(request, str):
        if len(request.encode("utf-8")) > MAX_LINE:
            return _error(None, INVALID_PARAMS, "request too large")
        try:
            request = json.loads(request)
        except json.JSONDecodeError as exc:
            return _error(None, INVALID_PARAMS, f"malformed JSON: {exc.msg}")
    if not isinstance(request, dict):
        return _error(None, INVALID_PARAMS, "request must be a JSON object")
    req_id = request.get("id")
    if isinstance(req_id, bool) or not isinstance(req_id, int):
        return _error(req_id if isinstance(req_id, (int, str)) else None, INVALID_PARAMS,
                      "'id' must be an integer")
    method = request.get("method")
    if not isinstance(method, str):
        return _error(req_id, INVALID_PARAMS, "'method' must be a string")
    params = request.get("params", {})
    if params is None:
        params = {}
    if not isinstance(params, dict):
        return _error(req_id, INVALID_PARAMS, "'params' must be a JSON object")
    if method not in METHODS:
        return _error(req_id, METHOD_NOT_FOUND, f"method not found: {method}")
    try:
        result = getattr(Dispatcher(registry), method)(params)
    except KinesimError as exc:
        return _error(req_id, exc.code, str(exc))
    except (TypeError, ValueError) as exc:
        return _error(req_id, INVALID_PARAMS, str(exc))
    except Exception as exc:  # keep the server alive; report and move on
        return _error(req_id, INTERNAL, f"internal error: {type(exc).__name__}: {exc}")
    return {"id": req_id, "result": result}


def encode_response(response: dict) -> str:
    """One response line. Non-finite floats never reach the wire."""
    try:
        return json.dumps(response, allow_nan=False, separators=(",", ":"))
    except ValueError:
        return json.dumps(_scrub(response), allow_nan=False, separators=(",", ":"))


def _scrub(value):
    if isinstance(value, float):
        return _finite(value)
    if isinstance(value, dict):
        return {k: _scrub(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_scrub(v) for v in value]
    return value


def handle_line(line, registry: Registry) -> str:
    return encode_response(handle_request(line, registry))
