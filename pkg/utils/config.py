"""Run configuration files: flat INI text with one section per concern.

    [mesh]      nx, ny, Nx, Ny, nu
    [eigen]     n_max, rule, snapshots, seed, power_iterations, kappa_mode
    [solver]    tol, maxit, variant
    [bench]     layout, contrasts, variants
    [optimize]  iterations, volume_fraction, penal, filter_radius, ...
    [output]    out_dir

Every key is optional. Values are converted with the type of the matching
dataclass default; command-line flags override file values.
"""
import configparser
import dataclasses
import logging
import os

logger = logging.getLogger(__name__)

SECTIONS = ('mesh', 'eigen', 'solver', 'bench', 'optimize', 'output')


def read_config(path):
    parser = configparser.ConfigParser()
    # keys such as Nx and Ny are case sensitive
    parser.optionxform = str
    if path is None:
        return parser
    if not os.path.exists(path):
        raise OSError(f"Configuration file not found: {path}")
    parser.read(path)
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ValueError(f"Unknown configuration sections {unknown}. Use {list(SECTIONS)}")
    logger.info(f"Loaded configuration from {path}")
    return parser


def parse_value(text, default):
    text = text.strip()
    if text.lower() == 'none':
        return None
    if isinstance(default, bool):
        return text.lower() in ('1', 'true', 'yes', 'on')
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, (tuple, list)):
        items = [item.strip() for item in text.split(',') if item.strip()]
        if default and isinstance(default[0], (int, float)):
            return type(default)(float(item) for item in items)
        return type(default)(items)
    if default is None:
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
    return text


KNOWN_KEYS = {
    'mesh': {'nx', 'ny', 'Nx', 'Ny', 'nu'},
    'eigen': {'n_max', 'rule', 'snapshots', 'seed', 'power_iterations', 'kappa_mode'},
    'solver': {'tol', 'maxit', 'variant', 'force'},
    'bench': {'layout', 'contrasts', 'variants', 'check_direct', 'contrast', 'coefficient'},
    'optimize': {'iterations', 'volume_fraction', 'penal', 'filter_radius', 'E_min', 'E_max', 'move',
                 'damping', 'snapshot_every', 'reuse_period', 'reuse_threshold', 'reuse_factor'},
    'output': {'out_dir'},
}


def section_values(parser, section, defaults):
    """Typed values of ``section`` for the keys present in ``defaults``.

    Keys that belong to the section but not to this command are skipped."""
    if not parser.has_section(section):
        return {}
    values = {}
    for key, text in parser.items(section):
        if key not in KNOWN_KEYS[section]:
            raise ValueError(f"Unknown key '{key}' in [{section}]. Use one of {sorted(KNOWN_KEYS[section])}")
        if key in defaults:
            values[key] = parse_value(text, defaults[key])
    return values


def dataclass_defaults(cls):
    defaults = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            defaults[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            defaults[f.name] = f.default_factory()
    return defaults


def merge_options(defaults, *layers):
    """Later layers win; None in a layer means 'not given'."""
    merged = dict(defaults)
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    return merged
