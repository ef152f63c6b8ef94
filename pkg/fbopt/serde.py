"""
Export and import of run traces.

CSV: one row per sample (see schema.sample_schema), the fine trace in a sibling file
<stem>.fine.csv. JSON: the complete trace with metadata; arrays are stored as
{"shape", "data"} with NaN written as null.
"""
import csv
import json
import logging
import math
import os
from typing import Any, Dict, List, Tuple

import numpy as np

from .constants import TRACE_CSV_FILE, TRACE_FORMAT_VERSION, TRACE_JSON_FILE
from .dataexchange import Response, RunStatus, SampleFlag
from .harness import RunTrace
from .schema import SimpleSchema, fine_schema, fine_schema_from_header, sample_schema, sample_schema_from_header


logger = logging.getLogger(__name__)

REAL_FIELDS = (
    "times",
    "states",
    "estimates",
    "u",
    "u_star",
    "x_star",
    "disturbance",
    "z_norm",
    "lyapunov",
    "perception_error",
    "nu",
    "margins",
    "clearance",
    "oracle_residual",
    "fine_times",
    "fine_states",
    "fine_inputs",
    "fine_z_norm",
)
INTEGER_FIELDS = ("snapshot_ids", "oracle_iterations")


class InvalidRow(Exception):
    """
    A row that does not match its schema
    """


class TraceFormatError(Exception):
    """
    A trace file that cannot be read back
    """


# section: rows


def serialize_row(schema: SimpleSchema, values: Dict[str, Any]) -> List[str]:
    """
    Encode values in column order
    """
    cells = []
    for column in schema.columns:
        if column.name not in values:
            raise InvalidRow(f"row lacks column [{column.name}]")
        value = values[column.name]
        if not column.datatype.is_valid_term(value):
            raise InvalidRow(f"value {value!r} is not a valid {column.datatype.typename} for column [{column.name}]")
        cells.append(column.datatype.serialize(value))
    return cells


def deserialize_row(schema: SimpleSchema, cells: List[str]) -> Dict[str, Any]:
    if len(cells) != len(schema.columns):
        raise InvalidRow(f"expected {len(schema.columns)} cells; got {len(cells)}")
    try:
        return {column.name: column.datatype.deserialize(cell) for column, cell in zip(schema.columns, cells)}
    except (ValueError, KeyError) as ex:
        raise InvalidRow(f"malformed cell: {ex}")


def _spread(values: Dict[str, Any], prefix: str, vector):
    for i, value in enumerate(vector):
        values[f"{prefix}_{i}"] = float(value)


def sample_rows(trace: RunTrace) -> Tuple[SimpleSchema, List[Dict[str, Any]]]:
    schema = sample_schema(trace.states.shape[1], trace.u.shape[1], trace.margins.shape[1])
    rows = []
    for k in range(trace.samples):
        values = {"k": k, "t": float(trace.times[k])}
        _spread(values, "x", trace.states[k])
        _spread(values, "xhat", trace.estimates[k])
        _spread(values, "u", trace.u[k])
        _spread(values, "ustar", trace.u_star[k])
        values["znorm"] = float(trace.z_norm[k])
        values["wk"] = float(trace.lyapunov[k])
        _spread(values, "margin", trace.margins[k])
        values["flags"] = tuple(trace.flags[k])
        rows.append(values)
    return schema, rows


def fine_rows(trace: RunTrace) -> Tuple[SimpleSchema, List[Dict[str, Any]]]:
    schema = fine_schema(trace.fine_states.shape[1], trace.fine_inputs.shape[1])
    rows = []
    for i in range(len(trace.fine_times)):
        values = {"t": float(trace.fine_times[i])}
        _spread(values, "x", trace.fine_states[i])
        _spread(values, "u", trace.fine_inputs[i])
        values["znorm"] = float(trace.fine_z_norm[i])
        rows.append(values)
    return schema, rows


def fine_path(path: str) -> str:
    """
    sibling file of a sample table: trace.csv -> trace.fine.csv
    """
    stem, ext = os.path.splitext(path)
    return f"{stem}.fine{ext or '.csv'}"


def _write_table(path: str, schema: SimpleSchema, rows: List[Dict[str, Any]]):
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(schema.header)
        for row in rows:
            writer.writerow(serialize_row(schema, row))


def _read_table(path: str, schema_from_header) -> Tuple[SimpleSchema, List[Dict[str, Any]]]:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"[{path}] is empty")
        schema = schema_from_header(header)
        if schema.header != header:
            raise TraceFormatError(f"[{path}] header does not match the trace schema: {header}")
        return schema, [deserialize_row(schema, cells) for cells in reader]


# section: json


def _encode_array(array: np.ndarray) -> Dict[str, Any]:
    flat = array.ravel().tolist()
    if array.dtype.kind == "f":
        flat = [None if math.isnan(value) else value for value in flat]
    return {"shape": list(array.shape), "data": flat}


def _decode_array(body: Dict[str, Any], dtype) -> np.ndarray:
    data = [math.nan if value is None else value for value in body["data"]]
    return np.array(data, dtype=dtype).reshape(body["shape"])


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def trace_to_dict(trace: RunTrace) -> Dict[str, Any]:
    body = {
        "format": TRACE_FORMAT_VERSION,
        "scenario_name": trace.scenario_name,
        "status": trace.status.name,
        "abort_reason": trace.abort_reason,
        "tau": trace.tau,
        "substeps": trace.substeps,
        "arrays": {name: _encode_array(getattr(trace, name)) for name in REAL_FIELDS + INTEGER_FIELDS},
        "flags": [[flag.name for flag in flags] for flags in trace.flags],
        "captures": [list(capture) for capture in trace.captures],
        "metadata": trace.metadata,
    }
    return body


def trace_from_dict(body: Dict[str, Any]) -> RunTrace:
    if not isinstance(body, dict) or body.get("format") != TRACE_FORMAT_VERSION:
        raise TraceFormatError(f"trace lacks the header [{TRACE_FORMAT_VERSION}]")
    try:
        arrays = {name: _decode_array(body["arrays"][name], float) for name in REAL_FIELDS}
        arrays.update({name: _decode_array(body["arrays"][name], int) for name in INTEGER_FIELDS})
        return RunTrace(
            scenario_name=body["scenario_name"],
            status=RunStatus[body["status"]],
            tau=float(body["tau"]),
            substeps=int(body["substeps"]),
            flags=[tuple(SampleFlag[name] for name in names) for names in body["flags"]],
            captures=[(int(index), int(k)) for index, k in body["captures"]],
            abort_reason=body["abort_reason"],
            metadata=body["metadata"],
            **arrays,
        )
    except (KeyError, TypeError, ValueError) as ex:
        raise TraceFormatError(f"malformed trace: {ex}")


# section: csv import


def _columns(rows: List[Dict[str, Any]], names: List[str]) -> np.ndarray:
    return np.array([[row[name] for name in names] for row in rows], dtype=float).reshape(len(rows), len(names))


def _trace_from_tables(sample_schema_: SimpleSchema, samples, fine_schema_: SimpleSchema, fine) -> RunTrace:
    K = len(samples)
    x_names, u_names = sample_schema_.group("x"), sample_schema_.group("u")
    n, m = len(x_names), len(u_names)
    u_star = _columns(samples, sample_schema_.group("ustar"))
    times = _columns(samples, ["t"])[:, 0]
    fine_times = _columns(fine, ["t"])[:, 0]
    substeps = len(fine) // K if K else 0
    if K > 1:
        tau = float(times[1] - times[0])
    elif len(fine_times) > 1:
        tau = float(fine_times[1] - fine_times[0]) * substeps
    else:
        tau = math.nan
    nu = np.full((K, 2), math.nan)
    if K > 1:
        nu[:-1, 0] = np.linalg.norm(np.diff(u_star, axis=0), axis=1)
    return RunTrace(
        scenario_name="",
        status=RunStatus.Completed,
        tau=tau,
        substeps=substeps,
        times=times,
        states=_columns(samples, x_names),
        estimates=_columns(samples, sample_schema_.group("xhat")),
        u=_columns(samples, u_names),
        u_star=u_star,
        x_star=np.full((K, n), math.nan),
        disturbance=np.zeros((K, 0)),
        z_norm=_columns(samples, ["znorm"])[:, 0],
        lyapunov=_columns(samples, ["wk"])[:, 0],
        perception_error=np.full(K, math.nan),
        nu=nu,
        snapshot_ids=np.full(K, -1, dtype=int),
        margins=_columns(samples, sample_schema_.group("margin")),
        clearance=np.full(K, math.nan),
        oracle_iterations=np.full(K, -1, dtype=int),
        oracle_residual=np.full(K, math.nan),
        flags=[row["flags"] for row in samples],
        fine_times=fine_times,
        fine_states=_columns(fine, fine_schema_.group("x")),
        fine_inputs=_columns(fine, fine_schema_.group("u")),
        fine_z_norm=_columns(fine, ["znorm"])[:, 0],
        metadata={"source": "csv"},
    )


# section: entry points


def export_trace(trace: RunTrace, path: str, format: str = "json") -> Response:
    """
    Write a trace as JSON, or as CSV with the fine trace in the sibling file.

    :return: Response with the list of written paths
    """
    if format not in ("csv", "json"):
        return Response(False, error_message=f"unknown trace format [{format}]")
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        if format == "json":
            with open(path, "w") as fp:
                json.dump(trace_to_dict(trace), fp, default=_json_default)
            written = [path]
        else:
            schema, rows = sample_rows(trace)
            _write_table(path, schema, rows)
            schema, rows = fine_rows(trace)
            _write_table(fine_path(path), schema, rows)
            written = [path, fine_path(path)]
    except (OSError, InvalidRow) as ex:
        return Response(False, error_message=f"unable to write trace [{path}]: {ex}")
    logger.info(f"wrote trace {written}")
    return Response(True, body=written)


def import_trace(path: str) -> Response:
    """
    Read a trace written by export_trace; the format follows the file extension.
    CSV holds only the sample and fine tables: fields it lacks are NaN.

    :return: Response with a RunTrace body
    """
    if not os.path.exists(path):
        return Response(False, error_message=f"trace file [{path}] not found")
    try:
        if path.endswith(".json"):
            with open(path) as fp:
                trace = trace_from_dict(json.load(fp))
        else:
            sample_schema_, samples = _read_table(path, sample_schema_from_header)
            fine_file = fine_path(path)
            if not os.path.exists(fine_file):
                return Response(False, error_message=f"fine trace [{fine_file}] not found")
            fine_schema_, fine = _read_table(fine_file, fine_schema_from_header)
            trace = _trace_from_tables(sample_schema_, samples, fine_schema_, fine)
    except (OSError, ValueError, InvalidRow, TraceFormatError) as ex:
        return Response(False, error_message=f"unable to read trace [{path}]: {ex}")
    return Response(True, body=trace)


def write_trace_dir(trace: RunTrace, directory: str) -> Response:
    """
    trace.json, trace.csv and trace.fine.csv in directory
    """
    written = []
    for filename, format in ((TRACE_JSON_FILE, "json"), (TRACE_CSV_FILE, "csv")):
        resp = export_trace(trace, os.path.join(directory, filename), format)
        if not resp.success:
            return resp
        written.extend(resp.body)
    return Response(True, body=written)


def read_trace_dir(directory: str) -> Response:
    """
    The JSON trace of a trace directory, falling back to the CSV tables
    """
    json_path = os.path.join(directory, TRACE_JSON_FILE)
    if os.path.exists(json_path):
        return import_trace(json_path)
    return import_trace(os.path.join(directory, TRACE_CSV_FILE))
