"""INI run configuration: ``[scene]``, ``[model]``, ``[eval]`` and ``[sweep]`` sections."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields

import numpy as np

from .evaluation import MATCH_RADIUS, auto_gammas
from .layers import ModelConfig
from .scenegen import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    """``gamma`` is the detection threshold for ``run``; ``gammas`` the ROC grid.

    ``gammas`` is either a comma-separated list or ``auto:<n>`` (``n``
    log-spaced thresholds from the largest response down by ``span``).
    """

    gamma: float | None = None
    gammas: str = "auto:400"
    span: float = 1e-8
    target_fa: float = 10.0
    radius: float = MATCH_RADIUS
    warmup: int | None = None


SWEEP_PARAMETERS = ("target_luminance", "target_size", "target_velocity",
                    "background_velocity", "background_direction")


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple


def _coerce(value, default, name):
    text = value.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if text.lower() in ("none", ""):
        return None
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(text)
        except ValueError:
            return float(text)
    if isinstance(default, float) or default is None:
        try:
            return float(text)
        except ValueError:
            if default is None:
                return text
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    return text


def _section(parser, name, defaults):
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(raw, defaults[key], f"[{name}] {key}")
    return out


def _model_defaults():
    return ModelConfig().as_flat_dict()


def _scene_defaults():
    d = SceneConfig().as_dict()
    d["target_height"] = 0
    return d


def _eval_defaults():
    return {f.name: f.default for f in fields(EvalConfig)}


def parse_config(text):
    """Parse INI text into ``(SceneConfig, ModelConfig, EvalConfig, SweepConfig | None)``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(parser.sections()) - {"scene", "model", "eval", "sweep"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    try:
        scene_kw = _section(parser, "scene", _scene_defaults())
        if scene_kw.get("target_height") in (0, None):
            scene_kw.pop("target_height", None)
        scene = SceneConfig(**scene_kw)
        model = ModelConfig.from_flat_dict(_section(parser, "model", _model_defaults()))
        ev = EvalConfig(**_section(parser, "eval", _eval_defaults()))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    sweep = None
    if parser.has_section("sweep"):
        s = dict(parser.items("sweep"))
        param = s.get("parameter", "").strip()
        if param not in SWEEP_PARAMETERS:
            raise ConfigError(f"[sweep] parameter must be one of {SWEEP_PARAMETERS}, got {param!r}")
        raw_values = [v.strip() for v in s.get("values", "").split(",") if v.strip()]
        if not raw_values:
            raise ConfigError("[sweep] values is empty")
        if param == "background_direction":
            values = tuple(raw_values)
        else:
            try:
                values = tuple(float(v) for v in raw_values)
            except ValueError as exc:
                raise ConfigError(f"[sweep] values: {exc}") from None
        sweep = SweepConfig(param, values)
    return scene, model, ev, sweep


def load_config(path=None):
    if path is None:
        return SceneConfig(), ModelConfig(), EvalConfig(), None
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(scene=None, model=None, ev=None, sweep=None):
    """Render configs back to INI text; ``parse_config`` round-trips it."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if scene is not None:
        d = scene.as_dict()
        d["target_height"] = d["target_height"] or 0
        parser["scene"] = {k: _fmt(v) for k, v in d.items()}
    if model is not None:
        parser["model"] = {k: _fmt(v) for k, v in model.as_flat_dict().items()}
    if ev is not None:
        parser["eval"] = {k: _fmt(v) for k, v in dataclasses.asdict(ev).items()}
    if sweep is not None:
        parser["sweep"] = {"parameter": sweep.parameter,
                           "values": ", ".join(_fmt(v) for v in sweep.values)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def gamma_grid(spec, peak, span=1e-8):
    """Strictly decreasing thresholds from a grid spec (see ``EvalConfig``)."""
    if isinstance(spec, (list, tuple, np.ndarray)):
        g = np.asarray(spec, dtype=np.float64)
    else:
        text = str(spec).strip()
        if text.startswith("auto"):
            n = int(text.split(":", 1)[1]) if ":" in text else 400
            g = auto_gammas(peak, n, span)
        else:
            try:
                g = np.array([float(v) for v in text.split(",") if v.strip()])
            except ValueError as exc:
                raise ConfigError(f"bad gamma grid {spec!r}") from exc
    g = np.unique(g)[::-1]
    if g.size == 0:
        raise ConfigError("gamma grid is empty")
    return g
