"""Offline-synthesis pipeline and its serialized artifact.

``synthesize`` runs the whole offline chain (covariance schedules, tightened
sets, cost matrix, terminal set) and returns a bundle that the simulator
consumes.  The bundle serializes to a versioned JSON document that reloads
without recomputation; it records a hash of the model file it was built from,
and the simulator refuses artifacts whose hash does not match the model it
was given.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ArtifactModelMismatch, ModelFileError
from .model import Polytope, spectral_radius
from .synthesis import LyapunovCost, TerminalSet, build_terminal_set, solve_lyapunov_cost
from .uncertainty import (
    CovarianceSchedule,
    GammaPolicy,
    TightenedSets,
    build_tightened_sets,
    compute_schedule,
)

ARTIFACT_VERSION = 1


@dataclass
class SynthesisArtifact:
    """Everything the online controller needs, computed offline."""

    version: int
    model_hash: str
    N: int
    policy: GammaPolicy
    K: np.ndarray
    schedule: CovarianceSchedule
    tightened: TightenedSets
    lyapunov: LyapunovCost
    terminal: TerminalSet
    diagnostics: dict

    def verify_model_bytes(self, raw):
        digest = hashlib.sha256(raw).hexdigest()
        if digest != self.model_hash:
            raise ArtifactModelMismatch(
                "synthesis artifact was built from a different model file "
                f"(artifact {self.model_hash[:12]}, given {digest[:12]})"
            )


def hash_model_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def synthesize(model, N, policy=None, model_hash=""):
    """Run the offline pipeline for a network model and horizon."""
    policy = policy or GammaPolicy()
    schedule = compute_schedule(model, N)
    schedule.validate()
    tightened = build_tightened_sets(model, schedule, policy)
    lyap = solve_lyapunov_cost(model.A_K, model.Q, model.R, model.K,
                               model.state_offsets)
    terminal = build_terminal_set(model, lyap, tightened.state_terminal,
                                  tightened.input_terminal)
    diagnostics = {
        "rho_closed_loop": spectral_radius(model.A_K),
        "lyapunov_residual": lyap.residual,
        "lyapunov_offblock_mass": lyap.offblock_mass,
        "terminal_level_scale": terminal.level_scale,
        "stage_state_tightening": [
            float(np.max(model.state_set.h - tightened.state[t].h))
            for t in range(N)
        ],
        "terminal_state_tightening": float(
            np.max(model.state_set.h - tightened.state_terminal.h)
        ),
        "terminal_input_tightening": float(
            np.max(model.input_set.h - tightened.input_terminal.h)
        ),
    }
    return SynthesisArtifact(
        version=ARTIFACT_VERSION, model_hash=model_hash, N=N, policy=policy,
        K=np.asarray(model.K), schedule=schedule, tightened=tightened,
        lyapunov=lyap, terminal=terminal, diagnostics=diagnostics,
    )


def _poly_to_doc(p):
    return {"H": np.asarray(p.H).tolist(), "h": np.asarray(p.h).tolist()}


def _poly_from_doc(d):
    return Polytope(np.array(d["H"], dtype=float), np.array(d["h"], dtype=float))


def save_artifact(artifact, path):
    doc = {
        "version": artifact.version,
        "model_hash": artifact.model_hash,
        "N": artifact.N,
        "policy": {"mode": artifact.policy.mode,
                   "distribution": artifact.policy.distribution},
        "K": artifact.K.tolist(),
        "schedule": {
            "exact": artifact.schedule.exact.tolist(),
            "bounded": artifact.schedule.bounded.tolist(),
            "exact_stationary": artifact.schedule.exact_stationary.tolist(),
            "bounded_stationary": artifact.schedule.bounded_stationary.tolist(),
            "input_exact": artifact.schedule.input_exact.tolist(),
            "input_bounded": artifact.schedule.input_bounded.tolist(),
            "input_exact_stationary":
                artifact.schedule.input_exact_stationary.tolist(),
            "input_bounded_stationary":
                artifact.schedule.input_bounded_stationary.tolist(),
        },
        "tightened": {
            "state": [_poly_to_doc(p) for p in artifact.tightened.state],
            "input": [_poly_to_doc(p) for p in artifact.tightened.input],
            "state_terminal": _poly_to_doc(artifact.tightened.state_terminal),
            "input_terminal": _poly_to_doc(artifact.tightened.input_terminal),
        },
        "lyapunov": {
            "P": artifact.lyapunov.P.tolist(),
            "residual": artifact.lyapunov.residual,
            "offblock_mass": artifact.lyapunov.offblock_mass,
        },
        "terminal": {
            "P_f": artifact.terminal.P_f.tolist(),
            "P_z": artifact.terminal.P_z.tolist(),
            "P_v": artifact.terminal.P_v.tolist(),
            "level_scale": artifact.terminal.level_scale,
            "gamma_alloc": artifact.terminal.gamma_alloc.tolist(),
        },
        "diagnostics": artifact.diagnostics,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_artifact(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("version") != ARTIFACT_VERSION:
        raise ModelFileError(
            f"unsupported artifact version {doc.get('version')!r}"
        )
    sched = doc["schedule"]
    schedule = CovarianceSchedule(
        N=int(doc["N"]),
        exact=np.array(sched["exact"], dtype=float),
        bounded=np.array(sched["bounded"], dtype=float),
        exact_stationary=np.array(sched["exact_stationary"], dtype=float),
        bounded_stationary=np.array(sched["bounded_stationary"], dtype=float),
        input_exact=np.array(sched["input_exact"], dtype=float),
        input_bounded=np.array(sched["input_bounded"], dtype=float),
        input_exact_stationary=np.array(sched["input_exact_stationary"],
                                        dtype=float),
        input_bounded_stationary=np.array(sched["input_bounded_stationary"],
                                          dtype=float),
    )
    tight = doc["tightened"]
    tightened = TightenedSets(
        state=tuple(_poly_from_doc(d) for d in tight["state"]),
        input=tuple(_poly_from_doc(d) for d in tight["input"]),
        state_terminal=_poly_from_doc(tight["state_terminal"]),
        input_terminal=_poly_from_doc(tight["input_terminal"]),
    )
    lyap = LyapunovCost(
        P=np.array(doc["lyapunov"]["P"], dtype=float),
        residual=float(doc["lyapunov"]["residual"]),
        offblock_mass=float(doc["lyapunov"]["offblock_mass"]),
    )
    term = doc["terminal"]
    terminal = TerminalSet(
        P_f=np.array(term["P_f"], dtype=float),
        P_z=np.array(term["P_z"], dtype=float),
        P_v=np.array(term["P_v"], dtype=float),
        level_scale=float(term["level_scale"]),
        gamma_alloc=np.array(term["gamma_alloc"], dtype=float),
    )
    return SynthesisArtifact(
        version=int(doc["version"]),
        model_hash=doc["model_hash"],
        N=int(doc["N"]),
        policy=GammaPolicy(mode=doc["policy"]["mode"],
                           distribution=doc["policy"]["distribution"]),
        K=np.array(doc["K"], dtype=float),
        schedule=schedule,
        tightened=tightened,
        lyapunov=lyap,
        terminal=terminal,
        diagnostics=doc.get("diagnostics", {}),
    )
