"""Consensus ADMM over per-agent subproblems with duplicated neighbor variables.

Each agent owns a subset of the global variables and keeps local copies of
the neighbor components that appear in its own cost and constraints.  One
iteration solves every agent's regularized subproblem (independently, so the
step is parallel in principle; execution here is sequential), averages each
shared variable over its holders, and updates the local duals.  Agents
exchange only the values of duplicated variables, i.e. neighbor-to-neighbor
messages; the global residual reduction is the only network-wide quantity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TopologyMismatch
from .qp import CentralizedWorkspace, ConicQp, SolverSettings


@dataclass(frozen=True)
class ConsensusTopology:
    """Mapping between agent-local variables and the global vector.

    Attributes
    ----------
    n_global : int
        Length of the global variable vector.
    local_to_global : tuple of int arrays
        For each agent, the global index of every local variable.
    owner : int array, shape (n_global,)
        The agent that owns each global variable.
    edges : tuple of (i, j) pairs
        Bidirectional communication links; a copy of an owned variable may
        only live on a neighbor of the owner.
    """

    n_global: int
    local_to_global: tuple
    owner: np.ndarray
    edges: tuple

    def __post_init__(self):
        owner = np.asarray(self.owner, dtype=int)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "local_to_global",
                           tuple(np.asarray(m, dtype=int) for m in self.local_to_global))
        if owner.shape != (self.n_global,):
            raise TopologyMismatch("owner array length must equal n_global")
        n_agents = len(self.local_to_global)
        if np.any(owner < 0) or np.any(owner >= n_agents):
            raise TopologyMismatch("owner indices out of range")
        adjacency = {i: {i} for i in range(n_agents)}
        for (i, j) in self.edges:
            adjacency[i].add(j)
            adjacency[j].add(i)
        seen = np.zeros(self.n_global, dtype=bool)
        for a, mapping in enumerate(self.local_to_global):
            if len(np.unique(mapping)) != len(mapping):
                raise TopologyMismatch(f"agent {a} duplicates a global index locally")
            for g in mapping:
                if g < 0 or g >= self.n_global:
                    raise TopologyMismatch(f"agent {a} references global index {g}")
                if owner[g] == a:
                    seen[g] = True
                elif owner[g] not in adjacency[a]:
                    raise TopologyMismatch(
                        f"agent {a} copies variable {g} owned by non-neighbor {owner[g]}"
                    )
        if not np.all(seen):
            missing = int(np.argmin(seen))
            raise TopologyMismatch(
                f"global variable {missing} does not appear on its owner"
            )

    @property
    def n_agents(self):
        return len(self.local_to_global)


def solve_distributed(local_qps, topology, settings=None, warm=None,
                      inner_settings=None):
    """Consensus ADMM across agents; returns (global x, status, info dict).

    ``local_qps`` holds one :class:`ConicQp` per agent over its local
    variables.  The union of the local problems (with duplicated variables
    identified) must be the intended global problem.  The result's ``x`` is
    the global consensus vector; ``info`` carries iteration count and the
    final residuals.
    """
    st = settings or SolverSettings()
    if len(local_qps) != topology.n_agents:
        raise TopologyMismatch(
            f"{len(local_qps)} local problems for {topology.n_agents} agents"
        )
    for a, qp in enumerate(local_qps):
        if qp.nvar != len(topology.local_to_global[a]):
            raise TopologyMismatch(
                f"agent {a}: problem has {qp.nvar} variables, topology maps "
                f"{len(topology.local_to_global[a])}"
            )

    rho_c = st.rho
    inner = inner_settings or SolverSettings(
        rho=st.rho, alpha=st.alpha, sigma=st.sigma,
        eps_abs=min(st.eps_abs, 1e-8), eps_rel=min(st.eps_rel, 1e-8),
        max_iter=st.max_iter, check_every=st.check_every,
        warm_start=True, scaling_iters=st.scaling_iters,
    )

    # Regularized local problems: cost + (rho_c/2) ||xi - target||^2.
    workspaces = []
    for qp in local_qps:
        aug = ConicQp(P=qp.P + rho_c * np.eye(qp.nvar), q=qp.q, A=qp.A,
                      lo=qp.lo, hi=qp.hi, ellipsoids=qp.ellipsoids)
        workspaces.append(CentralizedWorkspace(aug, inner))

    counts = np.zeros(topology.n_global)
    for mapping in topology.local_to_global:
        counts[mapping] += 1.0

    zeta = np.zeros(topology.n_global) if warm is None else np.asarray(warm, float).copy()
    duals = [np.zeros(len(mapping)) for mapping in topology.local_to_global]
    xis = [zeta[mapping].copy() for mapping in topology.local_to_global]

    r_prim = np.inf
    r_dual = np.inf
    it = 0
    converged = False
    for it in range(1, st.max_iter + 1):
        # parallel step: each agent solves with only its own data + messages
        for a, ws in enumerate(workspaces):
            mapping = topology.local_to_global[a]
            target = zeta[mapping] - duals[a]
            sol = ws.solve(q=local_qps[a].q - rho_c * target)
            xis[a] = sol.x

        zeta_prev = zeta
        acc = np.zeros(topology.n_global)
        for a, mapping in enumerate(topology.local_to_global):
            acc[mapping] += xis[a] + duals[a]
        zeta = acc / counts

        r_prim = 0.0
        for a, mapping in enumerate(topology.local_to_global):
            diff = xis[a] - zeta[mapping]
            duals[a] = duals[a] + diff
            if diff.size:
                r_prim = max(r_prim, float(np.max(np.abs(diff))))
        r_dual = rho_c * float(np.max(np.abs(zeta - zeta_prev)))

        scale = max(1.0, float(np.max(np.abs(zeta))))
        if r_prim <= st.eps_abs + st.eps_rel * scale and \
           r_dual <= st.eps_abs + st.eps_rel * scale:
            converged = True
            break

    status = "optimal" if converged else "max_iter"
    objective = sum(qp.objective(xi) for qp, xi in zip(local_qps, xis))
    info = {"iterations": it, "r_prim": r_prim, "r_dual": r_dual,
            "objective": float(objective)}
    return zeta, status, info
