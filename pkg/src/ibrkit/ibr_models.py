"""Linearized dq-frame models of grid-following (GFLI) and grid-forming
(GFMI) inverters.

Modeling conventions (fixed project-wide):

- Per-unit electrical quantities on the inverter base; every physical
  derivative carries 1/omega_b, i.e. an inductance L contributes
  (L/omega_b) d/dt.  The synchronous speed is omega0 = 1 pu.
- The linearization frame is aligned with the terminal voltage:
  vd0 = V, vq0 = 0.
- Internally, block equations use the current flowing from the inverter
  into the grid (id0 = P/V, iq0 = -Q/V).  The external admittance ports
  use the load convention: Y maps a terminal-voltage perturbation to the
  current drawn from the grid (the sign flip lives in the output routing
  L3), so a passive RL branch has the closed form

      Y(s) = [[s L' + Rf,  Lf], [-Lf,  s L' + Rf]] / ((s L' + Rf)^2 + Lf^2)

  with L' = Lf/omega_b.
- Frame transforms between the grid frame and the control frame are
  linearized into interconnection gains: measured signals pick up
  rot(theta0) routing plus a [Xq0_c, -Xd0_c] column from the angle state,
  the modulated voltage the inverse.  Converter modulation is an ideal
  unit gain (no switching delay).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ibrkit.ssmodel import (
    CompositeSystem,
    Interconnection,
    SingularResolventError,
    StateSpaceBlock,
    compose,
    frequency_response,
    stack_blocks,
)

GFLI = "GFLI"
GFMI = "GFMI"

# numerical slack on the rated-power circle (covers float grid values like
# 0.6, 0.8 whose squares do not sum to exactly 1.0)
FEASIBILITY_TOL = 1e-9

# retry factor applied once when the resolvent is singular at a grid frequency
RESONANCE_NUDGE = 1e-9

I2 = np.eye(2)
Z2 = np.zeros((2, 2))
# cross-coupling rotator: J @ [xd, xq] = [xq, -xd]
J = np.array([[0.0, 1.0], [-1.0, 0.0]])


class InfeasibleOperatingPointError(ValueError):
    """Apparent power of the requested operating point exceeds 1 pu."""


class SteadyStateError(ArithmeticError):
    """Equilibrium equations could not be satisfied to tolerance."""


def rot(theta: float) -> np.ndarray:
    """Coordinate rotation taking grid-frame dq components into a frame
    leading by theta (x_c = rot(theta) @ x_s)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class OperatingPoint:
    """Terminal condition (V, P, Q) in per-unit."""

    v: float
    p: float
    q: float

    def __post_init__(self):
        if not (0.9 - 1e-12 <= self.v <= 1.1 + 1e-12):
            raise ValueError(f"V={self.v} outside [0.9, 1.1] pu")
        if not (-1.0 - 1e-12 <= self.p <= 1.0 + 1e-12):
            raise ValueError(f"P={self.p} outside [-1, 1] pu")
        if not (-1.0 - 1e-12 <= self.q <= 1.0 + 1e-12):
            raise ValueError(f"Q={self.q} outside [-1, 1] pu")

    @property
    def is_feasible(self) -> bool:
        return self.p * self.p + self.q * self.q <= 1.0 + FEASIBILITY_TOL


@dataclass(frozen=True)
class InverterParams:
    """Physical and control parameters of one IBR (per-unit, gains in
    engineering units: PI gains act on pu signals, PLL/droop outputs are
    rad/s)."""

    name: str
    kind: str
    omega_b: float
    lf: float
    rf: float
    kp_i: float
    ki_i: float
    vff: float = 1.0  # voltage feedforward in the current loop, 0 or 1
    # GFLI only
    kp_pll: float | None = None
    ki_pll: float | None = None
    # GFMI only
    cf: float | None = None
    lg: float | None = None
    rg: float | None = None
    kp_v: float | None = None
    ki_v: float | None = None
    iff: float | None = None  # grid-current feedforward in the voltage loop
    mp: float | None = None  # active-power droop, rad/s per pu
    nq: float | None = None  # reactive-power droop, pu V per pu
    omega_c: float | None = None  # power-measurement low-pass cutoff, rad/s

    def __post_init__(self):
        if self.kind not in (GFLI, GFMI):
            raise ValueError(f"unknown inverter kind {self.kind!r}")
        for attr in ("omega_b", "lf", "rf"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"{self.name}: {attr} must be strictly positive")
        gfmi_only = ("cf", "lg", "rg", "kp_v", "ki_v", "mp", "nq", "omega_c", "iff")
        gfli_only = ("kp_pll", "ki_pll")
        required = gfli_only if self.kind == GFLI else gfmi_only
        forbidden = gfmi_only if self.kind == GFLI else gfli_only
        for attr in required:
            if getattr(self, attr) is None:
                raise ValueError(f"{self.name}: {self.kind} requires {attr}")
        for attr in forbidden:
            if getattr(self, attr) is not None:
                raise ValueError(f"{self.name}: {attr} is not a {self.kind} parameter")
        if self.kind == GFMI:
            for attr in ("cf", "lg", "rg", "omega_c"):
                if not getattr(self, attr) > 0:
                    raise ValueError(f"{self.name}: {attr} must be strictly positive")
        gains = ("kp_i", "ki_i", "vff", "kp_pll", "ki_pll", "kp_v", "ki_v", "iff", "mp", "nq")
        for attr in gains:
            val = getattr(self, attr)
            if val is not None and not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{self.name}: gain {attr}={val} must be finite and >= 0")


@dataclass(frozen=True)
class SteadyState:
    """Equilibrium about which the converter model is linearized.

    All dq pairs are grid-frame values; *_c fields are the same vectors in
    the control frame lagging by theta0.  Integrator fields store the PI
    states supporting the equilibrium (zero when the integral gain is 0).
    """

    vd0: float
    vq0: float
    id0: float
    iq0: float
    vmd0: float
    vmq0: float
    cur_int: tuple[float, float] = (0.0, 0.0)
    pll_int: float = 0.0
    # GFMI extras
    theta0: float = 0.0
    e0: float = 0.0
    vcd0: float = 0.0
    vcq0: float = 0.0
    ild0: float = 0.0
    ilq0: float = 0.0
    p_filt0: float = 0.0
    q_filt0: float = 0.0
    volt_int: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """2x2 complex dq admittance at one frequency (pu current per pu volt)."""

    ydd: complex
    ydq: complex
    yqd: complex
    yqq: complex
    f: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.ydd, self.ydq], [self.yqd, self.yqq]])


def steady_state(params: InverterParams, op: OperatingPoint) -> SteadyState:
    """Closed-form equilibrium in the terminal-voltage-aligned frame."""
    if not op.is_feasible:
        raise InfeasibleOperatingPointError(
            f"(V={op.v}, P={op.p}, Q={op.q}): apparent power "
            f"{math.hypot(op.p, op.q):.6f} pu exceeds the 1 pu rating"
        )
    v0 = np.array([op.v, 0.0])
    ig0 = np.array([op.p / op.v, -op.q / op.v])

    if params.kind == GFLI:
        vm0 = v0 + params.rf * ig0 - params.lf * (J @ ig0)
        if params.ki_i > 0:
            xi = (vm0 + params.lf * (J @ ig0) - params.vff * v0) / params.ki_i
        else:
            xi = np.zeros(2)
        ss = SteadyState(
            vd0=v0[0], vq0=v0[1], id0=ig0[0], iq0=ig0[1],
            vmd0=vm0[0], vmq0=vm0[1], cur_int=(xi[0], xi[1]),
        )
    else:
        vc0 = v0 + params.rg * ig0 - params.lg * (J @ ig0)
        il0 = ig0 - params.cf * (J @ vc0)
        vm0 = vc0 + params.rf * il0 - params.lf * (J @ il0)
        theta0 = math.atan2(vc0[1], vc0[0])
        r = rot(theta0)
        vc_c = r @ vc0
        il_c = r @ il0
        ig_c = r @ ig0
        vm_c = r @ vm0
        if params.ki_v > 0:
            xv = (il_c + params.cf * (J @ vc_c) - params.iff * ig_c) / params.ki_v
        else:
            xv = np.zeros(2)
        if params.ki_i > 0:
            xi = (vm_c + params.lf * (J @ il_c) - params.vff * vc_c) / params.ki_i
        else:
            xi = np.zeros(2)
        ss = SteadyState(
            vd0=v0[0], vq0=v0[1], id0=ig0[0], iq0=ig0[1],
            vmd0=vm0[0], vmq0=vm0[1], cur_int=(xi[0], xi[1]),
            theta0=theta0, e0=float(np.hypot(*vc0)),
            vcd0=vc0[0], vcq0=vc0[1], ild0=il0[0], ilq0=il0[1],
            p_filt0=op.p, q_filt0=op.q, volt_int=(xv[0], xv[1]),
        )

    resid = steady_state_residual(params, op, ss)
    if resid > 1e-10:
        raise SteadyStateError(
            f"{params.name} at (V={op.v}, P={op.p}, Q={op.q}): "
            f"equilibrium residual {resid:.3e} exceeds 1e-10"
        )
    return ss


def steady_state_residual(params: InverterParams, op: OperatingPoint, ss: SteadyState) -> float:
    """Max absolute residual of the nonlinear block equations at zero state
    derivative; the independent audit behind steady_state."""
    v0 = np.array([ss.vd0, ss.vq0])
    ig0 = np.array([ss.id0, ss.iq0])
    vm0 = np.array([ss.vmd0, ss.vmq0])
    res = [
        ss.vd0 * ss.id0 + ss.vq0 * ss.iq0 - op.p,
        ss.vq0 * ss.id0 - ss.vd0 * ss.iq0 - op.q,
        ss.vq0,
    ]
    if params.kind == GFLI:
        res.extend(vm0 - v0 - params.rf * ig0 + params.lf * (J @ ig0))
        if params.ki_i > 0:
            xi = np.asarray(ss.cur_int)
            res.extend(params.ki_i * xi - params.lf * (J @ ig0) + params.vff * v0 - vm0)
    else:
        vc0 = np.array([ss.vcd0, ss.vcq0])
        il0 = np.array([ss.ild0, ss.ilq0])
        r = rot(ss.theta0)
        res.extend(vc0 - v0 - params.rg * ig0 + params.lg * (J @ ig0))
        res.extend(il0 - ig0 + params.cf * (J @ vc0))
        res.extend(vm0 - vc0 - params.rf * il0 + params.lf * (J @ il0))
        res.append(ss.p_filt0 - op.p)
        res.append(ss.q_filt0 - op.q)
        vc_c = r @ vc0
        res.append(vc_c[1])  # control frame is capacitor-voltage aligned
        res.append(vc_c[0] - ss.e0)
        if params.ki_v > 0:
            xv = np.asarray(ss.volt_int)
            il_ref = params.ki_v * xv - params.cf * (J @ vc_c) + params.iff * (r @ ig0)
            res.extend(il_ref - r @ il0)
        if params.ki_i > 0:
            xi = np.asarray(ss.cur_int)
            vm_ref = params.ki_i * xi - params.lf * (J @ (r @ il0)) + params.vff * vc_c
            res.extend(vm_ref - r @ vm0)
    return float(np.max(np.abs(res)))


def build_gfli(
    params: InverterParams, ss: SteadyState
) -> tuple[list[StateSpaceBlock], Interconnection]:
    """GFLI subsystem set {RL filter, current PI, PLL} plus routing.

    Frame transforms enter as steady-state coupling gains in L1 (the PLL
    angle column); external ports are (dv_d, dv_q) -> (di_d, di_q) in the
    load convention.
    """
    if params.kind != GFLI:
        raise ValueError(f"{params.name} is not a GFLI")
    wb, lf, rf = params.omega_b, params.lf, params.rf

    # converter-side RL filter, grid frame
    filt = StateSpaceBlock(
        (wb / lf) * (-rf * I2 + lf * J),
        (wb / lf) * np.hstack([I2, -I2]),
        I2,
        np.zeros((2, 4)),
        ("filt.vm_d", "filt.vm_q", "filt.v_d", "filt.v_q"),
        ("filt.i_d", "filt.i_q"),
    )
    # current PI with constant references and standard SRF decoupling;
    # a fully disabled loop (both gains zero) outputs nothing at all
    dec_i = lf if (params.kp_i > 0 or params.ki_i > 0) else 0.0
    cur = StateSpaceBlock(
        Z2,
        np.hstack([-I2, Z2]),
        params.ki_i * I2,
        np.hstack([-params.kp_i * I2 - dec_i * J, params.vff * I2]),
        ("cur.i_d", "cur.i_q", "cur.v_d", "cur.v_q"),
        ("cur.vm_d", "cur.vm_q"),
    )
    # SRF-PLL: states (integrator, angle)
    pll = StateSpaceBlock(
        [[0.0, 0.0], [params.ki_pll, 0.0]],
        [[1.0], [params.kp_pll]],
        [[0.0, 1.0]],
        [[0.0]],
        ("pll.vq",),
        ("pll.theta",),
    )
    blocks = [filt, cur, pll]

    # stacked ports: inputs filt 0:4, cur 4:8, pll 8; outputs filt 0:2,
    # cur 2:4, pll 4
    l1 = np.zeros((9, 5))
    l2 = np.zeros((9, 2))
    th = 4
    # modulated voltage back to the grid frame
    l1[0:2, 2:4] = I2
    l1[0:2, th] = [-ss.vmq0, ss.vmd0]
    # measured current into the control frame
    l1[4:6, 0:2] = I2
    l1[4:6, th] = [ss.iq0, -ss.id0]
    # measured terminal voltage into the control frame
    l2[6:8, :] = I2
    l1[6:8, th] = [ss.vq0, -ss.vd0]
    # PLL tracks the q-axis control-frame voltage
    l2[8, 1] = 1.0
    l1[8, th] = -ss.vd0
    # terminal voltage drives the filter directly
    l2[2:4, :] = I2
    # load convention: current drawn from the grid
    l3 = np.zeros((2, 5))
    l3[0:2, 0:2] = -I2
    return blocks, Interconnection(l1, l2, l3, np.zeros((2, 2)))


def build_gfmi(
    params: InverterParams, ss: SteadyState
) -> tuple[list[StateSpaceBlock], Interconnection]:
    """GFMI subsystem set {LC filter + grid branch, power low-pass, droop
    angle, voltage PI, current PI} plus routing.

    Droop gains (-mp, -nq) and linearized frame transforms are coupling
    gains in L1; external ports as in build_gfli.
    """
    if params.kind != GFMI:
        raise ValueError(f"{params.name} is not a GFMI")
    wb, lf, rf = params.omega_b, params.lf, params.rf
    cf, lg, rg = params.cf, params.lg, params.rg

    # LC filter with grid-side coupling branch, grid frame;
    # states (iL, vC, ig), inputs (vm, v), all states measurable
    a = np.zeros((6, 6))
    a[0:2, 0:2] = (wb / lf) * (-rf * I2 + lf * J)
    a[0:2, 2:4] = -(wb / lf) * I2
    a[2:4, 0:2] = (wb / cf) * I2
    a[2:4, 2:4] = wb * J
    a[2:4, 4:6] = -(wb / cf) * I2
    a[4:6, 2:4] = (wb / lg) * I2
    a[4:6, 4:6] = (wb / lg) * (-rg * I2 + lg * J)
    b = np.zeros((6, 4))
    b[0:2, 0:2] = (wb / lf) * I2
    b[4:6, 2:4] = -(wb / lg) * I2
    plant = StateSpaceBlock(
        a, b, np.eye(6), np.zeros((6, 4)),
        ("plant.vm_d", "plant.vm_q", "plant.v_d", "plant.v_q"),
        ("plant.il_d", "plant.il_q", "plant.vc_d", "plant.vc_q", "plant.ig_d", "plant.ig_q"),
    )
    # instantaneous terminal power, low-passed
    lin = np.array(
        [
            [ss.id0, ss.iq0, ss.vd0, ss.vq0],
            [-ss.iq0, ss.id0, ss.vq0, -ss.vd0],
        ]
    )
    power = StateSpaceBlock(
        -params.omega_c * I2,
        params.omega_c * lin,
        I2,
        np.zeros((2, 4)),
        ("pw.v_d", "pw.v_q", "pw.ig_d", "pw.ig_q"),
        ("pw.p", "pw.q"),
    )
    # control-frame angle driven by the droop frequency
    angle = StateSpaceBlock(
        [[0.0]], [[1.0]], [[1.0]], [[0.0]], ("angle.w",), ("angle.theta",)
    )
    # cascaded voltage PI on vC (d-axis reference from the droop voltage);
    # decoupling active only while the loop is
    dec_v = cf if (params.kp_v > 0 or params.ki_v > 0) else 0.0
    volt = StateSpaceBlock(
        Z2,
        np.hstack([np.array([[1.0], [0.0]]), -I2, Z2]),
        params.ki_v * I2,
        np.hstack(
            [
                params.kp_v * np.array([[1.0], [0.0]]),
                -params.kp_v * I2 - dec_v * J,
                params.iff * I2,
            ]
        ),
        ("vctrl.e_ref", "vctrl.vc_d", "vctrl.vc_q", "vctrl.ig_d", "vctrl.ig_q"),
        ("vctrl.il_ref_d", "vctrl.il_ref_q"),
    )
    # inner current PI on iL
    dec_i = lf if (params.kp_i > 0 or params.ki_i > 0) else 0.0
    cur = StateSpaceBlock(
        Z2,
        np.hstack([I2, -I2, Z2]),
        params.ki_i * I2,
        np.hstack([params.kp_i * I2, -params.kp_i * I2 - dec_i * J, params.vff * I2]),
        ("cur.il_ref_d", "cur.il_ref_q", "cur.il_d", "cur.il_q", "cur.vc_d", "cur.vc_q"),
        ("cur.vm_d", "cur.vm_q"),
    )
    blocks = [plant, power, angle, volt, cur]

    r_fwd = rot(ss.theta0)  # grid -> control frame
    r_bwd = r_fwd.T  # control -> grid frame
    vc_c = r_fwd @ np.array([ss.vcd0, ss.vcq0])
    il_c = r_fwd @ np.array([ss.ild0, ss.ilq0])
    ig_c = r_fwd @ np.array([ss.id0, ss.iq0])

    # stacked ports: inputs plant 0:4, power 4:8, angle 8, volt 9:14,
    # cur 14:20; outputs plant 0:6, power 6:8, angle 8, volt 9:11, cur 11:13
    l1 = np.zeros((20, 13))
    l2 = np.zeros((20, 2))
    th = 8
    # modulation back to the grid frame
    l1[0:2, 11:13] = r_bwd
    l1[0:2, th] = [-ss.vmq0, ss.vmd0]
    # terminal voltage to plant and power measurement
    l2[2:4, :] = I2
    l2[4:6, :] = I2
    l1[6:8, 4:6] = I2
    # droop couplings (zero rows when the droop gains are zero)
    l1[8, 6] = -params.mp
    l1[9, 7] = -params.nq
    # measured capacitor voltage, grid current, inductor current into the
    # control frame
    l1[10:12, 2:4] = r_fwd
    l1[10:12, th] = [vc_c[1], -vc_c[0]]
    l1[12:14, 4:6] = r_fwd
    l1[12:14, th] = [ig_c[1], -ig_c[0]]
    l1[14:16, 9:11] = I2
    l1[16:18, 0:2] = r_fwd
    l1[16:18, th] = [il_c[1], -il_c[0]]
    l1[18:20, 2:4] = r_fwd
    l1[18:20, th] = [vc_c[1], -vc_c[0]]
    # load convention on the grid-branch current
    l3 = np.zeros((2, 13))
    l3[0:2, 4:6] = -I2
    return blocks, Interconnection(l1, l2, l3, np.zeros((2, 2)))


def compose_ibr(params: InverterParams, ss: SteadyState) -> CompositeSystem:
    """Stack and close the kind-appropriate subsystem set."""
    builder = build_gfli if params.kind == GFLI else build_gfmi
    blocks, ic = builder(params, ss)
    return compose(stack_blocks(blocks), ic)


def _response_with_nudge(sys: CompositeSystem, omega: float) -> np.ndarray:
    try:
        return frequency_response(sys, omega)
    except SingularResolventError:
        # grid frequencies may land on an undamped mode; retry once just off it
        return frequency_response(sys, omega * (1.0 + RESONANCE_NUDGE))


def admittance(params: InverterParams, op: OperatingPoint, f: float) -> AdmittanceMatrix:
    """dq admittance of one IBR at operating point op and frequency f [Hz]."""
    sys = compose_ibr(params, steady_state(params, op))
    g = _response_with_nudge(sys, 2.0 * math.pi * f)
    return AdmittanceMatrix(ydd=g[0, 0], ydq=g[0, 1], yqd=g[1, 0], yqq=g[1, 1], f=f)


def admittance_profile(
    params: InverterParams, op: OperatingPoint, freqs
) -> np.ndarray:
    """Admittance swept over frequencies [Hz] with one model composition;
    returns an (n_freq, 2, 2) complex array."""
    sys = compose_ibr(params, steady_state(params, op))
    freqs = np.asarray(freqs, dtype=float)
    out = np.empty((freqs.size, 2, 2), dtype=complex)
    for i, f in enumerate(freqs):
        out[i] = _response_with_nudge(sys, 2.0 * math.pi * f)
    return out


def load_catalog(path=None) -> dict[str, InverterParams]:
    """Load the IBR parameter catalog (name -> InverterParams), keeping file
    order.  Defaults to the packaged canonical catalog."""
    if path is None:
        text = resources.files("ibrkit.data").joinpath("default_catalog.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    entries = doc.get("ibrs")
    if not isinstance(entries, list) or not entries:
        raise ValueError("catalog must contain a non-empty 'ibrs' list")
    catalog: dict[str, InverterParams] = {}
    for entry in entries:
        entry = dict(entry)
        entry.pop("role", None)
        params = InverterParams(**entry)
        if params.name in catalog:
            raise ValueError(f"duplicate IBR name {params.name!r} in catalog")
        catalog[params.name] = params
    return catalog


def catalog_roles(path=None) -> dict[str, str]:
    """Role tag per catalog entry: 'canonical' devices enter the default
    training fleet, 'holdout' ones do not."""
    if path is None:
        text = resources.files("ibrkit.data").joinpath("default_catalog.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    return {e["name"]: e.get("role", "canonical") for e in doc["ibrs"]}
