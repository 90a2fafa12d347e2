"""File formats: record/point CSVs, result JSON and run configuration.

Every CSV starts with a stamp comment ``# twobeam <version> schema_version=<n>``
followed by the header row.  Files without a stamp are accepted as the
current schema; a stamp with another schema version is rejected.

Records CSV columns: ``cycle_index,phase,integration_time_s,counts``.  The
cycle index restarts at 0 for each rate level, so a new level begins at a row
whose cycle index drops below the previous row's, or whose (cycle, phase)
pair was already seen in the current level.

Points CSV columns: ``rate_ab_hz,delta_mean,delta_sem,n``.

Floats are written in shortest round-trip form, so reading a file back gives
bit-identical values.
"""

import configparser
import csv
import io as _io
import json
import os
import tempfile

from . import __version__
from .errors import SchemaError
from .harness import MeasurementRecord, NonlinearityPoint

__all__ = [
    "SCHEMA_VERSION",
    "RECORD_COLUMNS",
    "POINT_COLUMNS",
    "ConfigError",
    "fmt",
    "atomic_write",
    "write_records_csv",
    "read_records_csv",
    "write_points_csv",
    "read_points_csv",
    "write_table_csv",
    "write_json",
    "read_samples",
    "load_config",
]

SCHEMA_VERSION = 1
RECORD_COLUMNS = ("cycle_index", "phase", "integration_time_s", "counts")
POINT_COLUMNS = ("rate_ab_hz", "delta_mean", "delta_sem", "n")
_STAMP_PREFIX = "# twobeam"


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def fmt(value):
    """Shortest round-trip text for ints and floats."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stamp():
    return f"{_STAMP_PREFIX} {__version__} schema_version={SCHEMA_VERSION}\n"


def _csv_text(columns, rows):
    buf = _io.StringIO()
    buf.write(_stamp())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def write_table_csv(path, columns, rows):
    atomic_write(path, _csv_text(columns, rows))


def _read_table(path, columns):
    """Rows of a stamped CSV as ``(line_number, dict)``; checks stamp and header."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines and lines[0].startswith("#"):
        stamp = lines[0]
        if stamp.startswith(_STAMP_PREFIX):
            version = None
            for token in stamp.split():
                if token.startswith("schema_version="):
                    version = token.split("=", 1)[1]
            if version != str(SCHEMA_VERSION):
                raise SchemaError(
                    f"{path}: schema_version {version} does not match {SCHEMA_VERSION}")
        start = 1
    body = [ln for ln in lines[start:] if ln.strip()]
    if not body:
        raise SchemaError(f"{path}: missing header row")
    reader = csv.reader(body)
    header = tuple(h.strip() for h in next(reader))
    if header != columns:
        raise SchemaError(f"{path}: expected columns {','.join(columns)}, got {','.join(header)}")
    rows = []
    for offset, row in enumerate(reader):
        line = start + 2 + offset
        if len(row) != len(columns):
            raise SchemaError(f"{path}:{line}: expected {len(columns)} fields, got {len(row)}")
        rows.append((line, dict(zip(columns, (v.strip() for v in row)))))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def write_records_csv(path, records_by_level):
    """Write records grouped per rate level (a list of record lists)."""
    rows = []
    for records in records_by_level:
        for rec in records:
            rows.append((rec.cycle_index, str(rec.phase), rec.integration_time, rec.counts))
    write_table_csv(path, RECORD_COLUMNS, rows)


def read_records_csv(path):
    """Read a records CSV into per-level record lists.

    Raises ``SchemaError`` listing every offending row (bad values, orphan or
    duplicated phases).
    """
    problems = []
    levels = []
    current = []
    seen = set()
    last_cycle = None
    line_of = {}
    for line, row in _read_table(path, RECORD_COLUMNS):
        try:
            rec = MeasurementRecord(int(row["cycle_index"]), row["phase"],
                                    float(row["integration_time_s"]), int(row["counts"]))
        except (ValueError, SchemaError) as exc:
            problems.append(f"line {line}: {exc}")
            continue
        key = (rec.cycle_index, rec.phase)
        if current and (rec.cycle_index < last_cycle or key in seen):
            levels.append(current)
            current, seen = [], set()
        current.append(rec)
        seen.add(key)
        line_of[id(rec)] = line
        last_cycle = rec.cycle_index
    if current:
        levels.append(current)
    for level in levels:
        phases = {}
        for rec in level:
            phases.setdefault(rec.cycle_index, []).append(rec)
        for cycle, recs in phases.items():
            if len(recs) != 3:
                lines = ", ".join(str(line_of[id(r)]) for r in recs)
                problems.append(f"lines {lines}: cycle {cycle} is not a complete A/B/AB triple")
    if problems:
        raise SchemaError(f"{path}: " + "; ".join(problems))
    return levels


def write_points_csv(path, points):
    rows = [(p.detected_rate_ab, p.delta_mean, p.delta_sem, p.repetitions) for p in points]
    write_table_csv(path, POINT_COLUMNS, rows)


def read_points_csv(path):
    points = []
    for line, row in _read_table(path, POINT_COLUMNS):
        try:
            points.append(NonlinearityPoint(float(row["rate_ab_hz"]), float(row["delta_mean"]),
                                            float(row["delta_sem"]), int(row["n"])))
        except ValueError as exc:
            raise SchemaError(f"{path}:{line}: {exc}") from None
    return points


def write_json(path, document):
    atomic_write(path, json.dumps(document, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_samples(path):
    """Numbers from a text file, one per line; ``#`` starts a comment."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values.append(float(text.split(",")[0]))
            except ValueError:
                raise SchemaError(f"{path}:{n}: not a number: {text!r}") from None
    if not values:
        raise SchemaError(f"{path}: no samples")
    return values


# ---------------------------------------------------------------------------
# run configuration

def _float(text):
    return float(text)


def _int(text):
    return int(text, 0)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _log_grid(text):
    parts = text.split()
    if len(parts) != 3:
        raise ValueError("expected 'start stop count'")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


_DETECTOR_KEYS = {
    "model": (_choice("NP", "P"), "NP"),
    "dark_rate": (_float, 0.0),
    "dead_time_np": (_float, 0.0),
    "dead_time_p": (_float, 0.0),
    "mean_afterpulses": (_float, 0.0),
    "afterpulse_delay_tau": (_float, 0.0),
    "afterpulse_cascade": (_bool, False),
}

SECTION_KEYS = {
    "simulate": {
        **_DETECTOR_KEYS,
        "rate_grid": (_float_list, None),
        "rate_grid_log": (_log_grid, None),
        "rate_basis": (_choice("detected", "incident"), "detected"),
        "t_a": (_float, None),
        "t_b": (_float, None),
        "t_ab": (_float, None),
        "phase_time": (_float, None),
        "total_time": (_float, None),
        "expected_delta": (_float, 0.0),
        "repetitions": (_int, 30),
        "split_fraction": (_float, 0.5),
        "seed": (_int, 0),
        "drift_kind": (_choice("none", "sine", "random_walk"), "none"),
        "drift_amplitude": (_float, 0.0),
        "drift_period": (_float, 3600.0),
        "drift_seed": (_int, 0),
    },
    "fit": {"models": (lambda t: [m.strip() for m in t.split(",") if m.strip()],
                       ["NP", "P", "NP-P", "P-NP"]),
            "overlay_points": (_int, 200)},
    "allan": {"base_interval": (_float, None), "taus": (_float_list, None)},
    "plan": {"total_time": (_float, None), "expected_delta": (_float, 0.0)},
    "bounds": {"rate_grid": (_float_list, None), "rate_grid_log": (_log_grid, None),
               "integration_time": (_float, 20.0), "repetitions": (_int, 30),
               "dead_time": (_float, 0.0), "delta": (_float, 0.0)},
    "analyze": {},
}


def load_config(path, section):
    """Parse one subcommand section of an INI-style config file.

    The file must carry ``schema_version`` in a ``[meta]`` section.  Unknown
    sections or keys are rejected.  Returns a dict with every key of the
    section schema, defaults filled in.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = set(SECTION_KEYS) | {"meta"}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"{path}: unknown section [{name}]", field=name)
    if not parser.has_option("meta", "schema_version"):
        raise ConfigError(f"{path}: [meta] schema_version is required", field="schema_version")
    for key in parser.options("meta"):
        if key != "schema_version":
            raise ConfigError(f"{path}: unknown key meta.{key}", field=f"meta.{key}")
    version = parser.get("meta", "schema_version").strip()
    if version != str(SCHEMA_VERSION):
        raise ConfigError(f"{path}: schema_version {version} does not match {SCHEMA_VERSION}",
                          field="schema_version")
    schema = SECTION_KEYS[section]
    out = {key: default for key, (_, default) in schema.items()}
    if parser.has_section(section):
        for key, text in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {section}.{key}", field=f"{section}.{key}")
            try:
                out[key] = schema[key][0](text)
            except ValueError as exc:
                raise ConfigError(f"{path}: {section}.{key}: {exc}",
                                  field=f"{section}.{key}") from None
    return out
