"""Line-oriented ``key = value`` run-configuration files with section headers.

Example:

    [run]
    epochs = 30
    batch_size = 16

    [augment]
    pool = rotate90 crop_resize gaussian_blur gaussian_noise jitter jpeg_approx
    jitter.brightness = 0.6

Unknown sections or keys are rejected; missing keys fall back to their
defaults with a logged notice. ``parse -> serialize -> parse`` is a fixed
point (floats are written with full round-trip precision).
"""

import configparser
import io
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .augment import _DEFAULTS as _AUG_DEFAULTS
from .augment import AugmentationSpec, spec
from .certify import SmoothingConfig
from .corpus import GENERATORS, CorpusSpec
from .errors import ConfigError
from .training import RunConfig

log = logging.getLogger(__name__)

_RUN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "mu": float,
    "momentum": float,
    "nu": float,
    "c1": float,
    "c2": float,
    "seed": int,
    "channels": int,
    "height": int,
    "width": int,
    "n_views": int,
    "update_watermark": bool,
}
_SMOOTHING_KEYS = {"sigma": float, "n_mc": int, "clamp_eps": float, "seed": int}
_CORPUS_KEYS = {"n_images": int, "height": int, "width": int, "channels": int, "seed": int}
_THRESHOLD_KEYS = {"min_clean_auroc": float, "min_mean_auroc": float, "min_cell_auroc": float}


@dataclass
class AppConfig:
    run: RunConfig = field(default_factory=RunConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    corpus: CorpusSpec = field(default_factory=lambda: CorpusSpec(n_images=200))
    thresholds: dict[str, float] = field(default_factory=dict)


def parse_config(text: str) -> AppConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    known_sections = {"run", "smoothing", "corpus", "augment", "thresholds"}
    unknown = set(cp.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    run_kwargs = _section_values(cp, "run", _RUN_KEYS)
    smoothing_kwargs = _section_values(cp, "smoothing", _SMOOTHING_KEYS)
    corpus_kwargs = _section_values(cp, "corpus", _CORPUS_KEYS)
    corpus_kwargs.setdefault("n_images", 200)

    if cp.has_section("corpus"):
        weights = []
        for gen in GENERATORS:
            key = f"weight_{gen}"
            if cp.has_option("corpus", key):
                weights.append(float(cp.get("corpus", key)))
            else:
                weights.append(1.0)
        extra = set(cp.options("corpus")) - set(_CORPUS_KEYS) - {
            f"weight_{gen}" for gen in GENERATORS
        }
        if extra:
            raise ConfigError(f"unknown keys in [corpus]: {sorted(extra)}")
        corpus_kwargs["weights"] = tuple(weights)

    pool = None
    if cp.has_section("augment"):
        pool = _parse_pool(cp)
    if pool is not None:
        run_kwargs["pool"] = pool

    thresholds = {}
    if cp.has_section("thresholds"):
        extra = set(cp.options("thresholds")) - set(_THRESHOLD_KEYS)
        if extra:
            raise ConfigError(f"unknown keys in [thresholds]: {sorted(extra)}")
        for key in _THRESHOLD_KEYS:
            if cp.has_option("thresholds", key):
                thresholds[key] = float(cp.get("thresholds", key))

    _notice_defaults("run", _RUN_KEYS, cp)
    _notice_defaults("smoothing", _SMOOTHING_KEYS, cp)
    try:
        return AppConfig(
            run=RunConfig(**run_kwargs),
            smoothing=SmoothingConfig(**smoothing_kwargs),
            corpus=CorpusSpec(**corpus_kwargs),
            thresholds=thresholds,
        )
    except TypeError as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path) -> AppConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def serialize_config(cfg: AppConfig) -> str:
    out = io.StringIO()
    out.write("[run]\n")
    for key in _RUN_KEYS:
        out.write(f"{key} = {_fmt(getattr(cfg.run, key))}\n")
    out.write("\n[augment]\n")
    out.write("pool = " + " ".join(s.kind for s in cfg.run.pool) + "\n")
    for s in cfg.run.pool:
        for pkey in sorted(_AUG_DEFAULTS[s.kind]):
            out.write(f"{s.kind}.{pkey} = {_fmt(s.param(pkey))}\n")
    out.write("\n[smoothing]\n")
    for key in _SMOOTHING_KEYS:
        out.write(f"{key} = {_fmt(getattr(cfg.smoothing, key))}\n")
    out.write("\n[corpus]\n")
    for key in _CORPUS_KEYS:
        out.write(f"{key} = {_fmt(getattr(cfg.corpus, key))}\n")
    for gen, w in zip(GENERATORS, cfg.corpus.weights):
        out.write(f"weight_{gen} = {_fmt(w)}\n")
    if cfg.thresholds:
        out.write("\n[thresholds]\n")
        for key in _THRESHOLD_KEYS:
            if key in cfg.thresholds:
                out.write(f"{key} = {_fmt(cfg.thresholds[key])}\n")
    return out.getvalue()


def save_config(cfg: AppConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_config(cfg))


def _parse_pool(cp: configparser.ConfigParser) -> tuple[AugmentationSpec, ...]:
    options = set(cp.options("augment"))
    if "pool" not in options:
        raise ConfigError("[augment] section requires a 'pool' key")
    kinds = cp.get("augment", "pool").split()
    param_keys = options - {"pool"}
    per_kind: dict[str, dict[str, float]] = {}
    for key in sorted(param_keys):
        kind, _, pname = key.partition(".")
        if kind not in _AUG_DEFAULTS or not pname or pname not in _AUG_DEFAULTS[kind]:
            raise ConfigError(f"unknown key in [augment]: {key}")
        per_kind.setdefault(kind, {})[pname] = float(cp.get("augment", key))
    pool = []
    for kind in kinds:
        if kind not in _AUG_DEFAULTS:
            raise ConfigError(f"unknown augmentation kind in pool: {kind}")
        pool.append(spec(kind, **per_kind.get(kind, {})))
    return tuple(pool)


def _section_values(cp, section, keys) -> dict:
    if not cp.has_section(section):
        return {}
    extra = set(cp.options(section)) - set(keys)
    if section == "corpus":
        extra -= {f"weight_{gen}" for gen in GENERATORS}
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    out = {}
    for key, typ in keys.items():
        if not cp.has_option(section, key):
            continue
        raw = cp.get(section, key)
        if typ is bool:
            if raw.lower() not in ("true", "false"):
                raise ConfigError(f"{section}.{key} must be true or false, got {raw!r}")
            out[key] = raw.lower() == "true"
        else:
            try:
                out[key] = typ(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from e
    return out


def _notice_defaults(section, keys, cp) -> None:
    present = set(cp.options(section)) if cp.has_section(section) else set()
    for key in keys:
        if key not in present:
            log.info("config: [%s] %s not set, using default", section, key)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)
