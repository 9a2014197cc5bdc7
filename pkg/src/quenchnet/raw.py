"""Raw phase-angle files and the normalized curve bundles built from them.

A raw file is CSV with header ``frequency_hz,temperature_c,o2_percent_air,tan_theta``.
Rows at ``o2_percent_air == 0`` are the unquenched reference of their
``(frequency, temperature)`` group; every other row is divided by it.
"""

import csv
import json
from collections import defaultdict

import numpy as np

from .calibration import QuenchCurve
from .errors import DomainError, ParseError

RAW_HEADER = ["frequency_hz", "temperature_c", "o2_percent_air", "tan_theta"]
CURVES_VERSION = 1


def read_raw_phase(path):
    """Rows ``(hz, temperature, c, tan_theta)`` in file order."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != RAW_HEADER:
            raise ParseError(f"expected header {','.join(RAW_HEADER)}", path, 1)
        for rec in reader:
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != 4:
                raise ParseError(f"expected 4 columns, got {len(rec)}", path, reader.line_num)
            try:
                hz, temp, c, tan = (float(x) for x in rec)
            except ValueError:
                raise ParseError("non-numeric field", path, reader.line_num) from None
            if not all(np.isfinite((hz, temp, c, tan))):
                raise ParseError("non-finite field", path, reader.line_num)
            if hz <= 0:
                raise DomainError(f"{path}:{reader.line_num}: frequency must be positive")
            if c < 0:
                raise DomainError(f"{path}:{reader.line_num}: concentration must be >= 0")
            if tan <= 0:
                raise DomainError(f"{path}:{reader.line_num}: tan_theta must be positive, got {tan:g}")
            rows.append((hz, temp, c, tan))
    if not rows:
        raise ParseError("no data rows", path)
    return rows


def normalize(rows):
    """Group raw rows and divide by the zero-oxygen reference.

    Returns ``{temperature: [(hz, concentrations, ratios), ...]}`` with
    groups sorted by frequency and points sorted by concentration.
    """
    groups = defaultdict(list)
    for hz, temp, c, tan in rows:
        groups[(temp, hz)].append((c, tan))
    out = defaultdict(list)
    for (temp, hz), pts in sorted(groups.items()):
        refs = [tan for c, tan in pts if c == 0]
        if not refs:
            raise DomainError(f"no reference for {hz:g} Hz at {temp:g} degC")
        if len(refs) > 1:
            raise DomainError(f"several zero-oxygen rows for {hz:g} Hz at {temp:g} degC")
        pts.sort()
        c = np.array([p[0] for p in pts])
        r = np.array([p[1] for p in pts]) / refs[0]
        out[temp].append((hz, c, r))
    return dict(out)


def write_curves(bundles, path):
    doc = {"version": CURVES_VERSION, "bundles": []}
    for temp in sorted(bundles):
        doc["bundles"].append({
            "temperature_c": temp,
            "curves": [{"frequency_hz": hz, "o2_percent_air": c.tolist(), "r": r.tolist()}
                       for hz, c, r in bundles[temp]],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_curves(path):
    """``{temperature: [QuenchCurve, ...]}`` from a curve bundle file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    if not isinstance(doc, dict) or doc.get("version") != CURVES_VERSION:
        raise ParseError("not a curve bundle file (version mismatch)", path)
    out = {}
    try:
        for bundle in doc["bundles"]:
            temp = float(bundle["temperature_c"])
            out[temp] = [QuenchCurve(cv["frequency_hz"], temp, cv["o2_percent_air"], cv["r"])
                         for cv in bundle["curves"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed curve bundle: {exc}", path) from exc
    return out
