"""File formats: MDP / ensemble / policy / SRVI weights as JSON, batches and results as CSV."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .mdp import ModelEnsemble, Policy, TabularMdp, TransitionModel, check_stochastic
from .posterior import TransitionBatch


def _transitions(probs: np.ndarray, reward: np.ndarray | None):
    keep = probs > 0 if reward is None else (probs > 0) | (reward != 0)
    out = []
    for s, a, sp in zip(*np.nonzero(keep)):
        item = {"s": int(s), "a": int(a), "sp": int(sp), "p": float(probs[s, a, sp])}
        if reward is not None:
            item["r"] = float(reward[s, a, sp])
        out.append(item)
    return out


def mdp_to_dict(mdp: TabularMdp, model: TransitionModel) -> dict:
    """Triples with ``p > 0`` or ``r != 0`` are listed; everything else is zero."""
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "gamma": mdp.discount,
        "p0": [float(x) for x in mdp.initial_dist],
        "transitions": _transitions(np.asarray(model.probs), np.asarray(mdp.reward)),
    }


def _dims(data: dict):
    try:
        S, A = int(data["num_states"]), int(data["num_actions"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"missing or invalid dimension field: {exc}") from exc
    if S < 1 or A < 1:
        raise ArgumentError("num_states and num_actions must be positive")
    return S, A


def _fill(data: dict, S: int, A: int):
    probs = np.zeros((S, A, S))
    reward = np.zeros((S, A, S))
    for i, t in enumerate(data.get("transitions", [])):
        try:
            s, a, sp = int(t["s"]), int(t["a"]), int(t["sp"])
            p = float(t.get("p", 0.0))
            r = float(t.get("r", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"transition entry {i} is malformed: {exc}") from exc
        if not (0 <= s < S and 0 <= a < A and 0 <= sp < S):
            raise ArgumentError(f"transition entry {i} ({s}, {a}, {sp}) is out of range")
        probs[s, a, sp] = p
        reward[s, a, sp] = r
    return probs, reward


def mdp_from_dict(data: dict) -> tuple[TabularMdp, TransitionModel]:
    S, A = _dims(data)
    probs, reward = _fill(data, S, A)
    if "gamma" not in data or "p0" not in data:
        raise ArgumentError("MDP file needs 'gamma' and 'p0'")
    model = TransitionModel(check_stochastic(probs, "(s, a) row"))
    return TabularMdp(reward, float(data["gamma"]), np.asarray(data["p0"], dtype=float)), model


def ensemble_to_dict(mdp: TabularMdp, ensemble: ModelEnsemble) -> dict:
    models = []
    for m in ensemble.models:
        models.append(
            {"num_states": mdp.num_states, "num_actions": mdp.num_actions, "transitions": _transitions(m.probs, None)}
        )
    return {"weights": [float(w) for w in ensemble.weights], "models": models}


def ensemble_from_dict(data: dict) -> ModelEnsemble:
    if "models" not in data or "weights" not in data:
        raise ArgumentError("ensemble file needs 'weights' and 'models'")
    models = []
    for k, item in enumerate(data["models"]):
        S, A = _dims(item)
        probs, _ = _fill(item, S, A)
        models.append(TransitionModel(check_stochastic(probs, f"model {k} (s, a) row")))
    return ModelEnsemble(tuple(models), np.asarray(data["weights"], dtype=float))


def policy_to_dict(policy: Policy) -> dict:
    if policy.kind == "deterministic":
        return {"kind": "deterministic", "num_actions": policy.num_actions, "actions": policy.det_actions.tolist()}
    return {"kind": "randomized", "action_probs": policy.action_probs.tolist()}


def policy_from_dict(data: dict) -> Policy:
    kind = data.get("kind") if isinstance(data, dict) else None
    try:
        if kind == "deterministic":
            return Policy.deterministic(data["actions"], int(data["num_actions"]))
        if kind == "randomized":
            return Policy.randomized(np.asarray(data["action_probs"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"malformed policy: {exc}") from exc
    raise ArgumentError(f"unknown policy kind {kind!r}")


def weights_to_dict(solution) -> dict:
    return {
        "kind": solution.features.kind,
        "dimension": solution.features.dimension,
        "weights": [float(w) for w in solution.weights],
    }


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path} is not valid JSON: {exc}") from exc


def dumps(data) -> str:
    return json.dumps(data, indent=1, sort_keys=True) + "\n"


def write_text(path, text: str):
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def batch_to_csv(batch: TransitionBatch) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "a", "sp"])
    w.writerows(batch.samples.tolist())
    return buf.getvalue()


def batch_from_csv(text: str, num_states: int, num_actions: int) -> TransitionBatch:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["s", "a", "sp"]:
        raise ArgumentError("batch CSV must start with the header s,a,sp")
    try:
        samples = [[int(c) for c in r] for r in rows[1:] if r]
    except ValueError as exc:
        raise ArgumentError(f"batch CSV has a non-integer entry: {exc}") from exc
    return TransitionBatch(np.array(samples, dtype=np.int64).reshape(-1, 3), num_states, num_actions)


def format_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def rows_to_csv(header, rows) -> str:
    """CSV with shortest round-trip float formatting, so output is byte-stable."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(row[h]) for h in header])
    return buf.getvalue()
