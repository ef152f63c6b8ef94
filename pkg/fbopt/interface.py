"""
This module contains the highest level user-interaction: logging setup and the
command line, which loads scenarios, runs experiments and writes their artifacts.
"""
import argparse
import json
import logging
import math
import os
from dataclasses import asdict
from typing import List

import numpy as np

from .certificates import (
    CertificateError,
    CertificateInputs,
    OracleUnavailable,
    bound_envelope,
    build_certificate,
    recursion_oracle,
    schur_boundary,
)
from .constants import (
    CERTIFICATE_FILE,
    EXIT_RUNTIME_ABORT,
    EXIT_SUCCESS,
    EXIT_VALIDATION_FAILURE,
    USAGE,
)
from .costs import CostError
from .dataexchange import PerceptionMode, Response
from .harness import certificate_inputs, declared_perception_error, run_closed_loop
from .network import NetworkError
from .oracle import OracleNotConverged
from .perception import (
    GenerativeMap,
    PerceptionError,
    generate_training_set,
    load_model,
    save_model,
    train_perception,
)
from .scenario import ScenarioError, estimate_optimizer_drift, load_scenario, parse_override_value
from .serde import read_trace_dir, write_trace_dir
from .sweep import run_sweep


logger = logging.getLogger(__name__)


# section: core execution/user-interface logic


def config_logging(level=logging.INFO):
    # config logger
    FORMAT = "[%(filename)s:%(lineno)s - %(funcName)s ] %(message)s"
    # log to stdout
    logging.basicConfig(format=FORMAT, level=level)


def _fail(message: str, code: int = EXIT_VALIDATION_FAILURE) -> int:
    print(f"Error: {message}")
    return code


def _emit(body: dict, out: str = None) -> Response:
    text = json.dumps(body, indent=2, default=_json_default)
    if out is None:
        print(text)
        return Response(True, body=None)
    try:
        directory = os.path.dirname(os.path.abspath(out))
        os.makedirs(directory, exist_ok=True)
        with open(out, "w") as fp:
            fp.write(text + "\n")
    except OSError as ex:
        return Response(False, error_message=f"unable to write [{out}]: {ex}")
    return Response(True, body=out)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _load_model_for(scenario):
    if scenario.perception.mode != PerceptionMode.TrainedModel:
        return None
    resp = load_model(scenario.perception.model_path)
    if not resp.success:
        raise ScenarioError(resp.error_message)
    return resp.body


def run_command(scenario_path: str, out_dir: str) -> int:
    """
    Run the closed loop and write the trace (and the certificate when the scenario asks for one)
    """
    resp = load_scenario(scenario_path)
    if not resp.success:
        return _fail(resp.error_message)
    scenario = resp.body
    try:
        trace = run_closed_loop(scenario)
    except ScenarioError as ex:
        return _fail(str(ex))

    resp = write_trace_dir(trace, out_dir)
    if not resp.success:
        return _fail(resp.error_message)

    if scenario.controller.certify and trace.metadata.get("certificate_inputs"):
        report = build_certificate(CertificateInputs(**trace.metadata["certificate_inputs"]))
        resp = _emit(report.to_dict(), os.path.join(out_dir, CERTIFICATE_FILE))
        if not resp.success:
            return _fail(resp.error_message)

    if not trace.completed:
        return _fail(f"run aborted: {trace.abort_reason}", EXIT_RUNTIME_ABORT)
    print(f"run [{scenario.name}] completed: {trace.samples} samples written to {out_dir}")
    return EXIT_SUCCESS


def certify_command(scenario_path: str, out: str = None) -> int:
    """
    Certificate for a scenario from loop-independent quantities: the optimizer drift of
    the oracle sequence, the analytic disturbance rate and the declared perception error
    """
    resp = load_scenario(scenario_path)
    if not resp.success:
        return _fail(resp.error_message)
    scenario = resp.body
    try:
        model = _load_model_for(scenario)
        drift = estimate_optimizer_drift(scenario)
        inputs = certificate_inputs(scenario, drift or 0.0, declared_perception_error(scenario, model))
        report = build_certificate(inputs)
    except (ScenarioError, CostError, CertificateError) as ex:
        return _fail(str(ex))
    except OracleNotConverged as ex:
        return _fail(str(ex), EXIT_RUNTIME_ABORT)

    body = report.to_dict()
    body["scenario"] = scenario.name
    if drift is None:
        body["notes"].append("optimizer drift depends on the closed loop; certificate uses drift 0")
    try:
        body["schur_boundary"] = asdict(schur_boundary(inputs))
    except CertificateError as ex:
        body["notes"].append(f"no Schur boundary: {ex}")
    resp = _emit(body, out)
    if not resp.success:
        return _fail(resp.error_message)
    return EXIT_SUCCESS


def train_perception_command(scenario_path: str, out: str) -> int:
    resp = load_scenario(scenario_path, require_model=False)
    if not resp.success:
        return _fail(resp.error_message)
    scenario = resp.body
    settings = scenario.perception.training
    if settings is None:
        return _fail(f"scenario [{scenario.name}] has no [perception.training] table")
    try:
        gmap = GenerativeMap(scenario.perception.raster)
        training_set = generate_training_set(gmap, settings.region, settings.grid, settings.seed, settings.jitter)
        model = train_perception(
            training_set,
            arch=settings.arch,
            epochs=settings.epochs,
            lr=settings.learning_rate,
            seed=settings.seed,
            batch_size=settings.batch_size,
            momentum=settings.momentum,
            validation_grid=settings.validation_grid,
            optimizer=settings.optimizer,
            validation_region=settings.validation_region,
        )
    except NetworkError as ex:
        return _fail(str(ex), EXIT_RUNTIME_ABORT)
    except PerceptionError as ex:
        return _fail(str(ex))
    resp = save_model(model, out)
    if not resp.success:
        return _fail(resp.error_message)
    print(f"perception model written to {out}: measured error {model.measured_error:.6g}")
    return EXIT_SUCCESS


def split_values(text: str) -> List[str]:
    """
    Split a comma separated value list, keeping commas inside brackets and strings
    """
    items, depth, in_string, current = [], 0, False, []
    for ch in text:
        if ch == '"':
            in_string = not in_string
        elif not in_string and ch == "[":
            depth += 1
        elif not in_string and ch == "]":
            depth -= 1
        if ch == "," and depth == 0 and not in_string:
            items.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    items.append("".join(current).strip())
    return [item for item in items if item]


def sweep_command(scenario_path: str, param: str, values_text: str, workers: int = 1) -> int:
    resp = load_scenario(scenario_path)
    if not resp.success:
        return _fail(resp.error_message)
    try:
        values = [parse_override_value(item) for item in split_values(values_text)]
        result = run_sweep(resp.body, param, values, workers)
    except ScenarioError as ex:
        return _fail(str(ex))
    _emit(result.to_dict())
    if not result.all_completed:
        return _fail("one or more sweep runs aborted", EXIT_RUNTIME_ABORT)
    return EXIT_SUCCESS


def check_bound_command(trace_dir: str) -> int:
    """
    Evaluate the tracking envelope and the recursion oracle against a stored trace
    """
    resp = read_trace_dir(trace_dir)
    if not resp.success:
        return _fail(resp.error_message)
    trace = resp.body
    stored = trace.metadata.get("certificate_inputs")
    if not stored:
        return _fail(f"trace in [{trace_dir}] carries no certificate inputs")
    try:
        inputs = CertificateInputs(**stored)
        report = build_certificate(inputs)
    except (TypeError, CertificateError) as ex:
        return _fail(f"invalid certificate inputs: {ex}")
    if not report.schur_ok:
        return _fail(f"M1 is not Schur (spectral radius {report.spectral_radius:.6g}); no envelope")

    z0 = float(trace.z_norm[0]) if trace.samples else 0.0
    envelope = np.array([bound_envelope(report, inputs, k, z0) for k in range(trace.samples)])
    exceeded = [int(k) for k in np.flatnonzero(trace.z_norm > envelope)]
    body = {
        "samples": trace.samples,
        "envelope_violations": exceeded,
        "min_envelope_slack": float(np.min(envelope - trace.z_norm)) if trace.samples else math.nan,
    }
    ok = not exceeded
    try:
        verdict = recursion_oracle(trace, inputs)
        body["recursion"] = {
            "variant": verdict.variant,
            "steps": verdict.steps,
            "violations": [asdict(violation) for violation in verdict.violations],
            "worst_slack": verdict.worst_slack,
        }
        ok = ok and verdict.ok
    except OracleUnavailable as ex:
        body["recursion"] = f"unavailable: {ex}"
    _emit(body)
    return EXIT_SUCCESS if ok else EXIT_VALIDATION_FAILURE


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run_fbopt.py", usage=USAGE, add_help=True)
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command")

    run = commands.add_parser("run")
    run.add_argument("scenario")
    run.add_argument("--out", required=True)

    certify = commands.add_parser("certify")
    certify.add_argument("scenario")
    certify.add_argument("--out", default=None)

    train = commands.add_parser("train-perception")
    train.add_argument("scenario")
    train.add_argument("--out", required=True)

    sweep = commands.add_parser("sweep")
    sweep.add_argument("scenario")
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True)
    sweep.add_argument("--workers", type=int, default=1)

    check = commands.add_parser("check-bound")
    check.add_argument("trace_dir")
    return parser


def parse_args_and_start(args: List[str]) -> int:
    """
    parse args and run the requested command; returns the exit code
    """
    parser = _parser()
    try:
        options = parser.parse_args(args)
    except SystemExit as ex:
        # argparse exits on bad flags and on --help
        return EXIT_SUCCESS if ex.code == 0 else EXIT_VALIDATION_FAILURE
    config_logging(logging.DEBUG if options.debug else logging.INFO)

    if options.command is None:
        print("Error: command not specified")
        print(USAGE)
        return EXIT_VALIDATION_FAILURE
    if options.command == "run":
        return run_command(options.scenario, options.out)
    elif options.command == "certify":
        return certify_command(options.scenario, options.out)
    elif options.command == "train-perception":
        return train_perception_command(options.scenario, options.out)
    elif options.command == "sweep":
        if options.workers < 1:
            return _fail("--workers must be at least 1")
        return sweep_command(options.scenario, options.param, options.values, options.workers)
    else:
        assert options.command == "check-bound"
        return check_bound_command(options.trace_dir)
