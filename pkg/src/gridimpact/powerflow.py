"""AC power flow: sparse Newton-Raphson with reactive-limit handling.

Solves the polar mismatch equations with a full Newton iteration and
optional PV -> PQ switching at generator reactive limits. Divergence is
a verdict, not an exception: screening classifies diverged cases, so
``solve_newton`` always returns a solution object with ``converged``
set accordingly and a ``cause`` tag when it failed.

Islanded cases are handled by :func:`solve_islands`, which solves each
servable island separately (with the island slack designated by the
topology layer) and de-energizes dead islands.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import GridCase
from .topology import IslandPartition, find_islands

__all__ = [
    "AdmittanceMatrix",
    "PowerFlowOptions",
    "PowerFlowSolution",
    "Violation",
    "build_admittance",
    "solve_newton",
    "solve_islands",
    "check_violations",
    "bus_table_csv",
    "flow_table_csv",
]


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Complex nodal admittance matrix over the case's bus ordering."""

    bus_ids: tuple[int, ...]
    matrix: sp.csr_matrix  # n x n complex


def build_admittance(case: GridCase) -> AdmittanceMatrix:
    """Assemble the nodal admittance matrix (standard pi model).

    Out-of-service branches contribute nothing. Transformer taps are on
    the from side. Raises ``ValueError`` for an in-service branch with
    zero impedance.
    """
    n = len(case.buses)
    idx = case.bus_index
    diag = np.zeros(n, dtype=complex)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for br in case.branches:
        if not br.status:
            continue
        if br.resistance == 0.0 and br.reactance == 0.0:
            raise ValueError(
                f"branch {br.from_bus}-{br.to_bus}: zero impedance in service"
            )
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.resistance, br.reactance)
        shunt = 0.5j * br.total_charging
        a = br.tap_ratio
        diag[f] += (y + shunt) / (a * a)
        diag[t] += y + shunt
        rows += [f, t]
        cols += [t, f]
        vals += [-y / a, -y / a]
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    Y += sp.diags(diag, format="csr", dtype=complex)
    return AdmittanceMatrix(bus_ids=tuple(b.id for b in case.buses), matrix=Y.tocsr())


@dataclass(frozen=True)
class PowerFlowOptions:
    tolerance: float = 1e-6          # p.u. power mismatch, infinity norm
    max_iterations: int = 20         # total Newton steps, limit rounds included
    flat_start: bool = False         # else warm start from stored bus voltages
    enforce_q_limits: bool = True


@dataclass(frozen=True)
class Violation:
    """An operating-limit violation found in a converged solution."""

    kind: str        # undervoltage | overvoltage | branch_overload
    entity: str      # bus id or "from-to" endpoint pair
    value: float
    limit: float


@dataclass(frozen=True)
class IslandSolve:
    """Per-island convergence record inside a multi-island solution."""

    buses: frozenset[int]
    slack_bus: int | None
    converged: bool
    iterations: int
    max_mismatch: float
    cause: str | None


@dataclass(frozen=True)
class PowerFlowSolution:
    """Power flow result over a case's full bus/branch ordering.

    ``vm``/``va`` align with ``bus_ids``; de-energized buses carry zero
    voltage and ``energized`` False. Flow arrays align with the case's
    branch tuple; out-of-service branches carry zero flow.
    """

    converged: bool
    iterations: int
    max_mismatch: float
    bus_ids: tuple[int, ...]
    vm: np.ndarray
    va: np.ndarray
    energized: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    cause: str | None = None
    islands: tuple[IslandSolve, ...] = ()
    violations: tuple[Violation, ...] = ()

    def vm_at(self, bus_id: int) -> float:
        return float(self.vm[self.bus_ids.index(bus_id)])

    def va_at(self, bus_id: int) -> float:
        return float(self.va[self.bus_ids.index(bus_id)])


def _bus_arrays(case: GridCase, sub_ids: Sequence[int] | None = None):
    """Vectorized per-bus data (optionally restricted to an island)."""
    ids = [b.id for b in case.buses] if sub_ids is None else list(sub_ids)
    pos = {bid: k for k, bid in enumerate(ids)}
    n = len(ids)
    pd = np.zeros(n)
    qd = np.zeros(n)
    for b in case.buses:
        k = pos.get(b.id)
        if k is not None:
            pd[k] = b.load_p
            qd[k] = b.load_q
    pg = np.zeros(n)
    qg_fixed = np.zeros(n)
    qmin = np.zeros(n)
    qmax = np.zeros(n)
    vset = np.array([case.bus(bid).voltage_magnitude for bid in ids])
    has_machine = np.zeros(n, dtype=bool)
    for g in case.generators:
        k = pos.get(g.bus)
        if k is None:
            continue
        pg[k] += g.p_output
        qg_fixed[k] += g.q_output
        qmin[k] += g.q_min
        qmax[k] += g.q_max
        vset[k] = g.v_setpoint
        has_machine[k] = True
    return ids, pos, pd, qd, pg, qg_fixed, qmin, qmax, vset, has_machine


def _dSbus_dV(Y: sp.csr_matrix, V: np.ndarray):
    """Partial derivatives of the injections wrt angle and magnitude."""
    Ibus = Y @ V
    diagV = sp.diags(V).tocsr()
    diagI = sp.diags(Ibus).tocsr()
    diagVnorm = sp.diags(V / np.abs(V)).tocsr()
    dS_dVa = 1j * diagV @ (diagI - Y @ diagV).conjugate()
    dS_dVm = diagV @ (Y @ diagVnorm).conjugate() + diagI.conjugate() @ diagVnorm
    return dS_dVa.tocsr(), dS_dVm.tocsr()


def solve_newton(
    case: GridCase,
    options: PowerFlowOptions = PowerFlowOptions(),
    bus_subset: Sequence[int] | None = None,
    slack_override: int | None = None,
) -> PowerFlowSolution:
    """Full Newton-Raphson solve of the (sub)network.

    The network is assumed connected with one slack bus; use
    :func:`solve_islands` for possibly-islanded cases. Non-convergence
    (iteration cap, singular Jacobian, numerical blow-up) is reported in
    the returned solution, never raised.

    Args:
        case: The network.
        options: Solver controls.
        bus_subset: Restrict the solve to these buses (an island).
        slack_override: Use this bus as the angle/balance reference
            instead of the case slack (island solves).
    """
    ids, pos, pd, qd, pg, qg_fixed, qmin, qmax, vset, has_machine = _bus_arrays(
        case, bus_subset
    )
    n = len(ids)
    base = case.base_mva

    full = build_admittance(case)
    if bus_subset is None:
        Y = full.matrix
    else:
        take = np.array([case.bus_index[b] for b in ids])
        Y = full.matrix[take][:, take].tocsr()

    kind = {}
    for bid in ids:
        kind[bid] = case.bus(bid).kind
    slack_id = slack_override
    if slack_id is None:
        slacks = [bid for bid in ids if kind[bid] == "slack"]
        if not slacks:
            return _failed_solution(case, "no_slack")
        slack_id = slacks[0]
    islack = pos[slack_id]

    # A PV bus without any in-service machine cannot hold its setpoint;
    # a former slack bus inside an island keeps PV behaviour when another
    # bus was designated the island slack.
    is_pv = np.array(
        [
            bid != slack_id
            and kind[bid] in ("PV", "slack")
            and has_machine[pos[bid]]
            for bid in ids
        ],
        dtype=bool,
    )

    # Working state. Warm start uses the stored voltages; flat start is
    # unity magnitude at PQ buses, setpoints at PV and the slack, with
    # all angles at the slack's stored angle so the reference matches.
    va_slack = case.bus(slack_id).voltage_angle
    if options.flat_start:
        vm = np.ones(n)
        va = np.full(n, va_slack)
    else:
        vm = np.array([case.bus(bid).voltage_magnitude for bid in ids], dtype=float)
        va = np.array([case.bus(bid).voltage_angle for bid in ids], dtype=float)
    vm[is_pv] = vset[is_pv]
    if has_machine[islack]:
        vm[islack] = vset[islack]
    va[islack] = va_slack

    # Scheduled injections (p.u.). At PV buses Q is free; at PQ buses any
    # machine contributes its fixed q_output.
    p_spec = (pg - pd) / base
    q_spec = (qg_fixed - qd) / base

    q_mode = np.zeros(n, dtype=int)  # 0 free/PV, +1 latched at qmax, -1 at qmin
    switch_count = np.zeros(n, dtype=int)

    iterations = 0
    converged = False
    cause: str | None = None
    max_mismatch = np.inf

    def type_masks():
        pv_mask = is_pv & (q_mode == 0)
        pq_mask = ~pv_mask
        pq_mask[islack] = False
        pv_idx = np.flatnonzero(pv_mask)
        pq_idx = np.flatnonzero(pq_mask)
        return pv_idx, pq_idx

    def mismatch(V):
        S = V * np.conj(Y @ V)
        q_target = q_spec.copy()
        at_max = q_mode == 1
        at_min = q_mode == -1
        q_target[at_max] = (qmax[at_max] - qd[at_max]) / base
        q_target[at_min] = (qmin[at_min] - qd[at_min]) / base
        dP = S.real - p_spec
        dQ = S.imag - q_target
        pv_idx, pq_idx = type_masks()
        F = np.concatenate([dP[np.concatenate([pv_idx, pq_idx])], dQ[pq_idx]])
        return F, S

    def q_limit_pass(S) -> bool:
        """Latch/unlatch reactive limits; True when anything changed."""
        changed = False
        qg = S.imag * base + qd  # machine reactive output, MVAr
        pv_now = np.flatnonzero(is_pv & (q_mode == 0))
        for k in pv_now:
            if switch_count[k] >= 3:
                continue
            if qg[k] > qmax[k] + 1e-7:
                q_mode[k] = 1
                switch_count[k] += 1
                changed = True
            elif qg[k] < qmin[k] - 1e-7:
                q_mode[k] = -1
                switch_count[k] += 1
                changed = True
        for k in np.flatnonzero(is_pv & (q_mode != 0)):
            if switch_count[k] >= 3:
                continue
            if q_mode[k] == 1 and vm[k] > vset[k] + 1e-7:
                q_mode[k] = 0
                vm[k] = vset[k]
                switch_count[k] += 1
                changed = True
            elif q_mode[k] == -1 and vm[k] < vset[k] - 1e-7:
                q_mode[k] = 0
                vm[k] = vset[k]
                switch_count[k] += 1
                changed = True
        return changed

    while iterations <= options.max_iterations:
        V = vm * np.exp(1j * va)
        F, S = mismatch(V)
        max_mismatch = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(max_mismatch):
            cause = "numerical_overflow"
            break
        if max_mismatch <= options.tolerance:
            if options.enforce_q_limits and q_limit_pass(S):
                continue  # limits moved; resume with new bus types
            converged = True
            break
        if iterations == options.max_iterations:
            cause = "max_iterations"
            break

        pv_idx, pq_idx = type_masks()
        pvpq = np.concatenate([pv_idx, pq_idx])
        dS_dVa, dS_dVm = _dSbus_dV(Y, V)
        J11 = dS_dVa[pvpq][:, pvpq].real
        J12 = dS_dVm[pvpq][:, pq_idx].real
        J21 = dS_dVa[pq_idx][:, pvpq].imag
        J22 = dS_dVm[pq_idx][:, pq_idx].imag
        J = sp.bmat([[J11, J12], [J21, J22]], format="csc")
        try:
            dx = spla.spsolve(J, -F)
        except RuntimeError:
            cause = "singular_jacobian"
            break
        if not np.all(np.isfinite(dx)):
            cause = "singular_jacobian"
            break
        npv = pvpq.size
        va[pvpq] += dx[:npv]
        vm[pq_idx] += dx[npv:]
        iterations += 1

    vm_out = np.zeros(len(case.buses))
    va_out = np.zeros(len(case.buses))
    energized = np.zeros(len(case.buses), dtype=bool)
    for k, bid in enumerate(ids):
        j = case.bus_index[bid]
        vm_out[j] = vm[k]
        va_out[j] = va[k]
        energized[j] = True

    pf, qf, pt, qt = _branch_flows(case, vm_out, va_out, energized)
    record = IslandSolve(
        buses=frozenset(ids),
        slack_bus=slack_id,
        converged=converged,
        iterations=iterations,
        max_mismatch=max_mismatch,
        cause=cause,
    )
    return PowerFlowSolution(
        converged=converged,
        iterations=iterations,
        max_mismatch=max_mismatch,
        bus_ids=tuple(b.id for b in case.buses),
        vm=vm_out,
        va=va_out,
        energized=energized,
        p_from=pf,
        q_from=qf,
        p_to=pt,
        q_to=qt,
        cause=cause,
        islands=(record,),
    )


def _failed_solution(case, cause) -> PowerFlowSolution:
    nb = len(case.buses)
    z = np.zeros(nb)
    zb = np.zeros(len(case.branches))
    return PowerFlowSolution(
        converged=False,
        iterations=0,
        max_mismatch=np.inf,
        bus_ids=tuple(b.id for b in case.buses),
        vm=z.copy(),
        va=z.copy(),
        energized=np.zeros(nb, dtype=bool),
        p_from=zb.copy(),
        q_from=zb.copy(),
        p_to=zb.copy(),
        q_to=zb.copy(),
        cause=cause,
        islands=(),
    )


def _branch_flows(case: GridCase, vm, va, energized):
    """Branch MW/MVAr at both ends from bus voltages (zero when open)."""
    nb = len(case.branches)
    pf = np.zeros(nb)
    qf = np.zeros(nb)
    pt = np.zeros(nb)
    qt = np.zeros(nb)
    V = vm * np.exp(1j * va)
    idx = case.bus_index
    base = case.base_mva
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        if not (energized[f] and energized[t]):
            continue
        y = 1.0 / complex(br.resistance, br.reactance)
        shunt = 0.5j * br.total_charging
        a = br.tap_ratio
        yff = (y + shunt) / (a * a)
        yft = -y / a
        ytf = -y / a
        ytt = y + shunt
        sf = V[f] * np.conj(yff * V[f] + yft * V[t]) * base
        st = V[t] * np.conj(ytf * V[f] + ytt * V[t]) * base
        pf[k], qf[k] = sf.real, sf.imag
        pt[k], qt[k] = st.real, st.imag
    return pf, qf, pt, qt


def solve_islands(
    case: GridCase,
    options: PowerFlowOptions = PowerFlowOptions(),
    partition: IslandPartition | None = None,
    enforce_capability: bool = False,
) -> tuple[PowerFlowSolution, IslandPartition]:
    """Island-aware power flow driver.

    Each servable island is solved on its own with its designated slack;
    dead islands are left de-energized. The merged solution's
    ``converged`` is True iff every servable island converged.

    With ``enforce_capability``, an island whose load exceeds the summed
    nameplate MVA of its in-island generating units is reported
    unsolvable (cause ``generation_deficit``) without iterating: the
    conventional unbounded-slack solve would park the entire deficit on
    one machine, and no synchronous steady state exists there.
    """
    if partition is None:
        partition = find_islands(case)
    nb = len(case.buses)
    vm = np.zeros(nb)
    va = np.zeros(nb)
    energized = np.zeros(nb, dtype=bool)
    records: list[IslandSolve] = []
    all_ok = True
    iters = 0
    worst = 0.0
    for isl in partition.islands:
        if not isl.servable:
            records.append(
                IslandSolve(
                    buses=isl.buses,
                    slack_bus=None,
                    converged=False,
                    iterations=0,
                    max_mismatch=0.0,
                    cause="dead_island",
                )
            )
            continue
        if enforce_capability:
            load_mw = sum(case.bus(b).load_p for b in isl.buses)
            cap_mva = sum(
                g.mva_base
                for b in isl.buses
                for g in case.machines_at(b)
                if not g.is_condenser
            )
            if load_mw > cap_mva:
                records.append(
                    IslandSolve(
                        buses=isl.buses,
                        slack_bus=isl.slack_bus,
                        converged=False,
                        iterations=0,
                        max_mismatch=np.inf,
                        cause="generation_deficit",
                    )
                )
                all_ok = False
                worst = np.inf
                continue
        sub = sorted(isl.buses)
        sol = solve_newton(case, options, bus_subset=sub, slack_override=isl.slack_bus)
        rec = replace(sol.islands[0], buses=isl.buses)
        records.append(rec)
        all_ok &= sol.converged
        iters = max(iters, sol.iterations)
        worst = max(worst, sol.max_mismatch) if np.isfinite(sol.max_mismatch) else np.inf
        for bid in sub:
            j = case.bus_index[bid]
            vm[j] = sol.vm[j]
            va[j] = sol.va[j]
            energized[j] = True
    servable = [r for r in records if r.cause != "dead_island"]
    if not servable:
        all_ok = False
    pf, qf, pt, qt = _branch_flows(case, vm, va, energized)
    merged = PowerFlowSolution(
        converged=all_ok,
        iterations=iters,
        max_mismatch=worst if servable else np.inf,
        bus_ids=tuple(b.id for b in case.buses),
        vm=vm,
        va=va,
        energized=energized,
        p_from=pf,
        q_from=qf,
        p_to=pt,
        q_to=qt,
        cause=None if all_ok else "island_divergence" if servable else "dead_system",
        islands=tuple(records),
    )
    return merged, partition


def check_violations(
    case: GridCase,
    solution: PowerFlowSolution,
    v_min: float = 0.94,
    v_max: float = 1.06,
    max_loading: float = 1.0,
) -> list[Violation]:
    """Scan a converged solution for voltage and loading violations.

    De-energized buses and branches are skipped; branches without a
    rating (rating 0) are never flagged for overload. Results are
    ordered deterministically: buses by id, then branches by endpoints.

    Raises:
        ValueError: If called on a diverged solution.
    """
    if not solution.converged:
        raise ValueError("violations are only defined for a converged solution")
    out: list[Violation] = []
    for j, bid in enumerate(solution.bus_ids):
        if not solution.energized[j]:
            continue
        v = float(solution.vm[j])
        if v < v_min:
            out.append(Violation("undervoltage", str(bid), v, v_min))
        elif v > v_max:
            out.append(Violation("overvoltage", str(bid), v, v_max))
    flagged = []
    for k, br in enumerate(case.branches):
        if not br.status or br.rating <= 0:
            continue
        s = max(
            float(np.hypot(solution.p_from[k], solution.q_from[k])),
            float(np.hypot(solution.p_to[k], solution.q_to[k])),
        )
        if s > max_loading * br.rating:
            flagged.append((br.endpoints, Violation(
                "branch_overload", f"{br.from_bus}-{br.to_bus}", s, br.rating
            )))
    flagged.sort(key=lambda p: p[0])
    out.extend(v for _, v in flagged)
    return out


def bus_table_csv(solution: PowerFlowSolution) -> str:
    """Bus results as CSV text: bus, v_pu, angle_deg."""
    lines = ["bus,v_pu,angle_deg"]
    for j, bid in enumerate(solution.bus_ids):
        lines.append(
            f"{bid},{solution.vm[j]:.6f},{np.degrees(solution.va[j]):.6f}"
        )
    return "\n".join(lines) + "\n"


def flow_table_csv(case: GridCase, solution: PowerFlowSolution) -> str:
    """Branch results as CSV text: from, to, p_mw, q_mvar (sending end)."""
    lines = ["from,to,p_mw,q_mvar"]
    for k, br in enumerate(case.branches):
        lines.append(
            f"{br.from_bus},{br.to_bus},{solution.p_from[k]:.4f},{solution.q_from[k]:.4f}"
        )
    return "\n".join(lines) + "\n"
