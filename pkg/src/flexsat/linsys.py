"""Continuous-time LTI state-space core.

Labeled state-space models, block interconnection with algebraic-loop
elimination, frequency-domain analysis, H-infinity / H2 norms, Lyapunov and
Riccati solvers and zero-order-hold time simulation.  Every other module in
the package trades in the :class:`StateSpace` type defined here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionError,
    IllPosedError,
    LabelError,
    NotDetectableError,
    NumericalError,
    UnstableError,
)

__all__ = [
    "StateSpace",
    "FrequencyResponse",
    "SignalTrace",
    "static_gain",
    "integrator",
    "transfer_function",
    "series",
    "stack",
    "interconnect",
    "lft_lower",
    "freq_response",
    "sigma_bounds",
    "peak_gain_on_grid",
    "hinf_norm",
    "h2_norm",
    "lyap_solve",
    "care_solve",
    "simulate",
    "is_stable",
]

LOOP_SINGULARITY_TOL = 1e-10


def _as_matrix(x, rows, cols, name):
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.shape != (rows, cols):
        raise DimensionError(f"{name} must be {rows}x{cols}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _check_labels(labels, direction):
    labels = tuple(str(x) for x in labels)
    if len(set(labels)) != len(labels):
        raise LabelError(f"duplicate {direction} labels")
    return labels


@dataclass(frozen=True)
class StateSpace:
    """Continuous-time linear system ``(A, B, C, D)`` with labeled channels."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple[str, ...]
    output_labels: tuple[str, ...]

    def __post_init__(self):
        inputs = _check_labels(self.input_labels, "input")
        outputs = _check_labels(self.output_labels, "output")
        n = np.atleast_2d(np.asarray(self.A, dtype=float)).shape[0]
        m, p = len(inputs), len(outputs)
        a = _as_matrix(self.A, n, n, "A") if n else np.zeros((0, 0))
        b = _as_matrix(self.B, n, m, "B") if n else np.zeros((0, m))
        c = _as_matrix(self.C, p, n, "C") if n else np.zeros((p, 0))
        d = _as_matrix(self.D, p, m, "D")
        for arr in (a, b, c, d):
            arr.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "D", d)
        object.__setattr__(self, "input_labels", inputs)
        object.__setattr__(self, "output_labels", outputs)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return len(self.input_labels)

    @property
    def n_outputs(self) -> int:
        return len(self.output_labels)

    def input_index(self, label: str) -> int:
        try:
            return self.input_labels.index(label)
        except ValueError:
            raise LabelError(f"unknown input label {label!r}") from None

    def output_index(self, label: str) -> int:
        try:
            return self.output_labels.index(label)
        except ValueError:
            raise LabelError(f"unknown output label {label!r}") from None

    def subsystem(self, inputs=None, outputs=None) -> "StateSpace":
        """Select a sub-transfer by channel labels (keeps all states)."""
        inputs = self.input_labels if inputs is None else tuple(inputs)
        outputs = self.output_labels if outputs is None else tuple(outputs)
        ji = [self.input_index(l) for l in inputs]
        jo = [self.output_index(l) for l in outputs]
        return StateSpace(self.A, self.B[:, ji], self.C[jo, :],
                          self.D[np.ix_(jo, ji)], inputs, outputs)

    def relabeled(self, input_labels=None, output_labels=None) -> "StateSpace":
        return StateSpace(self.A, self.B, self.C, self.D,
                          input_labels or self.input_labels,
                          output_labels or self.output_labels)

    def to_json(self) -> str:
        doc = {
            "a": self.A.tolist(),
            "b": self.B.tolist(),
            "c": self.C.tolist(),
            "d": self.D.tolist(),
            "inputs": list(self.input_labels),
            "outputs": list(self.output_labels),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "StateSpace":
        doc = json.loads(text)
        n = len(doc["a"])
        m, p = len(doc["inputs"]), len(doc["outputs"])
        a = np.array(doc["a"], dtype=float).reshape(n, n)
        b = np.array(doc["b"], dtype=float).reshape(n, m)
        c = np.array(doc["c"], dtype=float).reshape(p, n)
        d = np.array(doc["d"], dtype=float).reshape(p, m)
        return cls(a, b, c, d, tuple(doc["inputs"]), tuple(doc["outputs"]))


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex response matrices sampled on a positive, increasing grid."""

    grid: np.ndarray
    values: np.ndarray  # (n_freq, p, m) complex
    input_labels: tuple[str, ...] = ()
    output_labels: tuple[str, ...] = ()
    singular_points: tuple[int, ...] = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise DimensionError("frequency grid must be a non-empty vector")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing and positive")
        values = np.asarray(self.values, dtype=complex)
        if values.ndim != 3 or values.shape[0] != grid.size:
            raise DimensionError("one response matrix required per grid point")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def to_csv(self) -> str:
        """CSV with re/im column pairs per channel, frequency first."""
        p, m = self.values.shape[1:]
        out_lbl = self.output_labels or tuple(f"y{i}" for i in range(p))
        in_lbl = self.input_labels or tuple(f"u{j}" for j in range(m))
        header = ["freq_rad_s"]
        for i in range(p):
            for j in range(m):
                name = f"{out_lbl[i]}<-{in_lbl[j]}"
                header += [f"{name}_re", f"{name}_im"]
        lines = [",".join(header)]
        for k, w in enumerate(self.grid):
            row = [repr(float(w))]
            for i in range(p):
                for j in range(m):
                    v = self.values[k, i, j]
                    row += [repr(float(v.real)), repr(float(v.imag))]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled labeled real signals."""

    dt: float
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        chans = {}
        n = None
        for name, data in self.channels.items():
            arr = np.asarray(data, dtype=float)
            if arr.ndim != 1:
                raise DimensionError(f"channel {name!r} must be 1-D")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DimensionError("channels must have equal length")
            arr.setflags(write=False)
            chans[str(name)] = arr
        object.__setattr__(self, "channels", chans)

    @property
    def n_samples(self) -> int:
        for arr in self.channels.values():
            return arr.size
        return 0

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def matrix(self, labels) -> np.ndarray:
        """Samples as an (n_samples, n_channels) array in label order."""
        try:
            return np.column_stack([self.channels[l] for l in labels])
        except KeyError as exc:
            raise LabelError(f"unknown channel {exc.args[0]!r}") from None

    def to_csv(self) -> str:
        names = list(self.channels)
        lines = [",".join(["time_s"] + names)]
        t = self.time
        for k in range(self.n_samples):
            row = [repr(float(t[k]))] + [repr(float(self.channels[n][k]))
                                         for n in names]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# constructors

def static_gain(D, input_labels, output_labels) -> StateSpace:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    return StateSpace(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                      np.zeros((D.shape[0], 0)), D, input_labels, output_labels)


def integrator(input_label: str, output_label: str) -> StateSpace:
    return StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]],
                      (input_label,), (output_label,))


def transfer_function(num, den, input_label="u", output_label="y") -> StateSpace:
    """SISO controllable-canonical realization of num(s)/den(s)."""
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    if den[0] == 0:
        raise ValueError("leading denominator coefficient must be non-zero")
    if num.size > den.size:
        raise ValueError("transfer function must be proper")
    num = num / den[0]
    den = den / den[0]
    n = den.size - 1
    num = np.concatenate([np.zeros(den.size - num.size), num])
    d = num[0]
    rest = num[1:] - d * den[1:]
    if n == 0:
        return static_gain([[d]], (input_label,), (output_label,))
    a = np.zeros((n, n))
    a[0, :] = -den[1:]
    a[1:, :-1] = np.eye(n - 1)
    b = np.zeros((n, 1))
    b[0, 0] = 1.0
    c = rest.reshape(1, n)
    return StateSpace(a, b, c, [[d]], (input_label,), (output_label,))


def series(g1: StateSpace, g2: StateSpace) -> StateSpace:
    """Cascade ``g2 * g1`` (output of g1 into input of g2, by position)."""
    if g1.n_outputs != g2.n_inputs:
        raise DimensionError("series: channel counts do not match")
    n1, n2 = g1.n_states, g2.n_states
    a = np.block([
        [g1.A, np.zeros((n1, n2))],
        [g2.B @ g1.C, g2.A],
    ]) if n1 + n2 else np.zeros((0, 0))
    b = np.vstack([g1.B, g2.B @ g1.D])
    c = np.hstack([g2.D @ g1.C, g2.C])
    d = g2.D @ g1.D
    return StateSpace(a, b, c, d, g1.input_labels, g2.output_labels)


def stack(blocks: list[StateSpace]) -> StateSpace:
    """Block-diagonal aggregate preserving channel labels."""
    a = sla.block_diag(*[g.A for g in blocks]) if blocks else np.zeros((0, 0))
    b = sla.block_diag(*[g.B for g in blocks])
    c = sla.block_diag(*[g.C for g in blocks])
    d = sla.block_diag(*[g.D for g in blocks])
    inputs = tuple(l for g in blocks for l in g.input_labels)
    outputs = tuple(l for g in blocks for l in g.output_labels)
    return StateSpace(a, b, c, d, inputs, outputs)


# ---------------------------------------------------------------------------
# interconnection

def interconnect(blocks, connections, external_in, external_out) -> StateSpace:
    """Wire labeled blocks together and reduce to the external channels.

    ``connections`` is an iterable of ``(source_output, sink_input, gain)``
    tuples.  Each sink input may be driven by at most one connection plus,
    optionally, one identically-named external input (the two are summed).
    Static feedthrough loops are eliminated by a direct solve of the loop
    equation; a loop matrix singular within ``LOOP_SINGULARITY_TOL`` raises
    :class:`IllPosedError`.
    """
    blocks = list(blocks)
    agg = stack(blocks)
    nu, ny = agg.n_inputs, agg.n_outputs
    in_idx = {}
    for i, lbl in enumerate(agg.input_labels):
        if lbl in in_idx:
            raise LabelError(f"input label {lbl!r} appears in several blocks")
        in_idx[lbl] = i
    out_idx = {}
    for i, lbl in enumerate(agg.output_labels):
        if lbl in out_idx:
            raise LabelError(f"output label {lbl!r} appears in several blocks")
        out_idx[lbl] = i

    M = np.zeros((nu, ny))
    driven = set()
    for src, dst, gain in connections:
        if src not in out_idx:
            raise LabelError(f"unknown source output {src!r}")
        if dst not in in_idx:
            raise LabelError(f"unknown sink input {dst!r}")
        if dst in driven:
            raise LabelError(f"sink input {dst!r} driven twice")
        driven.add(dst)
        M[in_idx[dst], out_idx[src]] = float(gain)

    external_in = tuple(external_in)
    external_out = tuple(external_out)
    E = np.zeros((nu, len(external_in)))
    for k, lbl in enumerate(external_in):
        if lbl not in in_idx:
            raise LabelError(f"unknown external input {lbl!r}")
        E[in_idx[lbl], k] = 1.0
    S = np.zeros((len(external_out), ny))
    for k, lbl in enumerate(external_out):
        if lbl not in out_idx:
            raise LabelError(f"unknown external output {lbl!r}")
        S[k, out_idx[lbl]] = 1.0

    loop = np.eye(nu) - M @ agg.D
    sv = sla.svdvals(loop) if nu else np.array([1.0])
    if sv[-1] < LOOP_SINGULARITY_TOL * max(1.0, sv[0]):
        raise IllPosedError("algebraic feedthrough loop is singular")
    # u = F (M C x + E w) with F = (I - M D)^-1
    FMC = sla.solve(loop, M @ agg.C) if nu else np.zeros((0, agg.n_states))
    FE = sla.solve(loop, E) if nu else E
    a = agg.A + agg.B @ FMC
    b = agg.B @ FE
    cy = agg.C + agg.D @ FMC
    dy = agg.D @ FE
    return StateSpace(a, b, S @ cy, S @ dy, external_in, external_out)


def lft_lower(G: StateSpace, K: StateSpace, u2=None, y2=None) -> StateSpace:
    """Standard lower linear fractional closure of ``G`` with ``K``.

    ``u2`` / ``y2`` name the G-inputs driven by K and the G-outputs fed to K;
    they default to the trailing channels matching K's dimensions.
    """
    if u2 is None:
        u2 = G.input_labels[G.n_inputs - K.n_outputs:]
    if y2 is None:
        y2 = G.output_labels[G.n_outputs - K.n_inputs:]
    u2 = tuple(u2)
    y2 = tuple(y2)
    if len(u2) != K.n_outputs or len(y2) != K.n_inputs:
        raise DimensionError("controller dimensions do not match partition")
    j2 = [G.input_index(l) for l in u2]
    j1 = [i for i in range(G.n_inputs) if i not in j2]
    i2 = [G.output_index(l) for l in y2]
    i1 = [i for i in range(G.n_outputs) if i not in i2]

    B1, B2 = G.B[:, j1], G.B[:, j2]
    C1, C2 = G.C[i1, :], G.C[i2, :]
    D11 = G.D[np.ix_(i1, j1)]
    D12 = G.D[np.ix_(i1, j2)]
    D21 = G.D[np.ix_(i2, j1)]
    D22 = G.D[np.ix_(i2, j2)]

    loop = np.eye(len(j2)) - K.D @ D22
    sv = sla.svdvals(loop) if len(j2) else np.array([1.0])
    if sv[-1] < LOOP_SINGULARITY_TOL * max(1.0, sv[0]):
        raise IllPosedError("singular feedthrough loop in LFT closure")
    X = sla.solve(loop, np.hstack([K.C, K.D @ C2, K.D @ D21]))
    nk = K.n_states
    Kc = X[:, :nk]
    Xc = X[:, nk:nk + G.n_states]
    Xd = X[:, nk + G.n_states:]
    # u2 = Kc xk + Xc x + Xd w
    a = np.block([
        [G.A + B2 @ Xc, B2 @ Kc],
        [K.B @ (C2 + D22 @ Xc), K.A + K.B @ D22 @ Kc],
    ])
    b = np.vstack([B1 + B2 @ Xd, K.B @ (D21 + D22 @ Xd)])
    c = np.hstack([C1 + D12 @ Xc, D12 @ Kc])
    d = D11 + D12 @ Xd
    in_lbl = tuple(G.input_labels[i] for i in j1)
    out_lbl = tuple(G.output_labels[i] for i in i1)
    return StateSpace(a, b, c, d, in_lbl, out_lbl)


# ---------------------------------------------------------------------------
# frequency-domain analysis

def freq_response(G: StateSpace, grid) -> FrequencyResponse:
    """Evaluate ``C (jw I - A)^-1 B + D`` on the given grid.

    Points where ``jw`` is an eigenvalue of A are reported in
    ``singular_points`` (values set to NaN); the remaining points are still
    computed.
    """
    grid = np.asarray(grid, dtype=float)
    n, m = G.n_states, G.n_inputs
    values = np.empty((grid.size, G.n_outputs, m), dtype=complex)
    singular = []
    if n == 0:
        values[:] = G.D
        return FrequencyResponse(grid, values, G.input_labels, G.output_labels)
    # Hessenberg form makes the per-frequency solve O(n^2 m).
    Hh, Q = sla.hessenberg(G.A, calc_q=True)
    Bh = Q.T @ G.B
    Ch = G.C @ Q
    eigs = sla.eigvals(G.A)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    near = np.abs(1j * grid[:, None] - eigs[None, :]).min(axis=1) \
        < 1e-12 * scale
    ok = ~near
    if np.any(ok):
        lhs = (1j * grid[ok, None, None] * np.eye(n)[None] - Hh[None])
        try:
            x = np.linalg.solve(lhs, np.broadcast_to(Bh, (int(ok.sum()), n, m)))
            values[ok] = Ch @ x + G.D
        except np.linalg.LinAlgError:
            # batched solve refuses if any single frequency is singular;
            # fall back to one-at-a-time so the rest still get values
            for k in np.nonzero(ok)[0]:
                try:
                    xk = sla.solve(1j * grid[k] * np.eye(n) - Hh, Bh)
                    values[k] = Ch @ xk + G.D
                except sla.LinAlgError:
                    ok[k] = False
        fin = np.isfinite(values[ok]).all(axis=(1, 2))
        ok[np.nonzero(ok)[0][~fin]] = False
    bad = np.nonzero(~ok)[0]
    values[bad] = np.nan
    return FrequencyResponse(grid, values, G.input_labels, G.output_labels,
                             tuple(int(k) for k in bad))


def sigma_bounds(F: FrequencyResponse) -> np.ndarray:
    """Descending singular values per grid point, shape (n_freq, min(p, m))."""
    nf, p, m = F.values.shape
    out = np.empty((nf, min(p, m)))
    for k in range(nf):
        if np.all(np.isfinite(F.values[k])):
            out[k] = sla.svdvals(F.values[k])
        else:
            out[k] = np.nan
    return out


def _response_matrix(Hh, Bh, Ch, D, w):
    n = Hh.shape[0]
    return Ch @ sla.solve(1j * w * np.eye(n) - Hh, Bh) + D


def peak_gain_on_grid(G: StateSpace, grid=None, refine: int = 12,
                      include_dc: bool = True):
    """Largest singular value over a log grid with local golden refinement.

    Fast lower-bound evaluator used by the structured tuner; the certified
    value comes from :func:`hinf_norm`.  Returns ``(gain, freq)``.  With
    ``include_dc=False`` the static gain is not considered, so the search
    stays strictly inside the grid's frequency range.
    """
    if grid is None:
        grid = np.logspace(-3, 5, 400)
    if G.n_states == 0:
        return float(sla.svdvals(G.D)[0]) if G.D.size else 0.0, float(grid[0])
    Hh, Q = sla.hessenberg(G.A, calc_q=True)
    Bh = Q.T @ G.B
    Ch = G.C @ Q

    def gain(w):
        try:
            return float(sla.svdvals(_response_matrix(Hh, Bh, Ch, G.D, w))[0])
        except sla.LinAlgError:
            return np.inf

    gains = np.array([gain(w) for w in grid])
    k = int(np.argmax(gains))
    best, wbest = gains[k], grid[k]
    lo = grid[max(0, k - 1)]
    hi = grid[min(len(grid) - 1, k + 1)]
    phi = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = np.log(lo), np.log(hi)
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = gain(np.exp(x1)), gain(np.exp(x2))
    for _ in range(refine):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = gain(np.exp(x2))
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = gain(np.exp(x1))
    for x, f in ((x1, f1), (x2, f2)):
        if f > best:
            best, wbest = f, np.exp(x)
    if include_dc:
        dc = float(sla.svdvals(G.D - G.C @ sla.solve(G.A, G.B))[0])
        if dc > best:
            best, wbest = dc, 0.0
    return float(best), float(wbest)


def is_stable(G: StateSpace) -> tuple[bool, float]:
    """Hurwitz test; returns ``(stable, spectral_abscissa)``."""
    if G.n_states == 0:
        return True, -np.inf
    alpha = float(np.max(np.real(sla.eigvals(G.A))))
    return alpha < 0.0, alpha


def _hamiltonian_has_imag_eigs(G, gamma):
    """Imaginary-axis eigenvalue test for sigma_max(G(jw)) >= gamma.

    Returns the list of crossing frequencies (possibly empty).
    """
    A, B, C, D = G.A, G.B, G.C, G.D
    n, m = A.shape[0], B.shape[1]
    p = C.shape[0]
    R = D.T @ D - gamma**2 * np.eye(m)
    S = D @ D.T - gamma**2 * np.eye(p)
    Rinv_Dt_C = sla.solve(R, D.T @ C)
    Rinv_Bt = sla.solve(R, B.T)
    H = np.block([
        [A - B @ Rinv_Dt_C, -gamma * B @ Rinv_Bt],
        [gamma * sla.solve(S.T, C).T @ C, -(A - B @ Rinv_Dt_C).T],
    ])
    eig = sla.eigvals(H)
    scale = max(1.0, float(np.max(np.abs(eig))))
    tol = 1e-8 * scale
    freqs = sorted({float(abs(e.imag)) for e in eig
                    if abs(e.real) < tol and abs(e.imag) > tol})
    return freqs


def hinf_norm(G: StateSpace, rel_tol: float = 1e-6) -> float:
    """H-infinity norm via grid seeding plus Hamiltonian bisection."""
    if not 0.0 < rel_tol <= 0.1:
        raise ValueError("rel_tol must be in (0, 0.1]")
    stable, alpha = is_stable(G)
    if not stable:
        raise UnstableError(f"A is not Hurwitz (spectral abscissa {alpha:g})")
    if G.n_states == 0:
        return float(sla.svdvals(G.D)[0]) if G.D.size else 0.0
    if G.n_inputs == 0 or G.n_outputs == 0:
        return 0.0
    lb, _ = peak_gain_on_grid(G, np.logspace(-3, 5, 400), refine=0)
    d_norm = float(sla.svdvals(G.D)[0]) if G.D.size else 0.0
    lb = max(lb, d_norm, 1e-300)
    Hh, Q = sla.hessenberg(G.A, calc_q=True)
    Bh, Ch = Q.T @ G.B, G.C @ Q

    def gain(w):
        return float(sla.svdvals(_response_matrix(Hh, Bh, Ch, G.D, w))[0])

    # Grow the lower bound from Hamiltonian crossing frequencies, then bisect.
    for _ in range(200):
        gamma = lb * (1.0 + 2.0 * rel_tol)
        if gamma <= d_norm:
            gamma = d_norm * (1 + 1e-12) + 1e-300
        freqs = _hamiltonian_has_imag_eigs(G, gamma)
        if not freqs:
            return lb * (1.0 + rel_tol)
        mids = [np.sqrt(freqs[i] * freqs[i + 1])
                for i in range(len(freqs) - 1)] or freqs
        new_lb = max(gain(w) for w in mids + freqs)
        if new_lb <= lb * (1.0 + 1e-14):
            return lb * (1.0 + rel_tol)
        lb = new_lb
    raise NumericalError("H-infinity norm iteration failed to converge")


def lyap_solve(A, Q) -> np.ndarray:
    """Solve ``A P + P A' + Q = 0`` for Hurwitz ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if A.size and np.max(np.real(sla.eigvals(A))) >= 0:
        raise UnstableError("A is not Hurwitz")
    P = sla.solve_continuous_lyapunov(A, -Q)
    res = sla.norm(A @ P + P @ A.T + Q)
    scale = max(1.0, sla.norm(Q), 2.0 * sla.norm(A) * sla.norm(P))
    if res > 1e-9 * scale:
        raise NumericalError(f"Lyapunov residual too large: {res:g}")
    return 0.5 * (P + P.T)


def h2_norm(G: StateSpace) -> float:
    """H2 norm ``sqrt(trace(C P C'))`` with ``A P + P A' + B B' = 0``."""
    stable, alpha = is_stable(G)
    if not stable:
        raise UnstableError(f"A is not Hurwitz (spectral abscissa {alpha:g})")
    if np.any(G.D != 0.0):
        raise ValueError("H2 norm requires zero feedthrough")
    if G.n_states == 0:
        return 0.0
    P = lyap_solve(G.A, G.B @ G.B.T)
    val = float(np.trace(G.C @ P @ G.C.T))
    return float(np.sqrt(max(val, 0.0)))


def care_solve(A, C, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Filter-type CARE ``A P + P A' - P C' R^-1 C P + Q = 0``.

    Newton-Kleinman iteration from a stabilizing gain obtained by
    eigenvalue-shifted Lyapunov stabilization.  Returns ``(P, K)`` with
    ``K = P C' R^-1`` and ``A - K C`` Hurwitz.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    alpha = float(np.max(np.real(sla.eigvals(A)))) if n else -1.0
    if alpha < 0:
        K = np.zeros((n, C.shape[0]))
    else:
        # Bass stabilization of the dual pair (A', C'); the shift must make
        # A + beta*I anti-stable.
        beta = 1.0 + float(np.max(np.abs(sla.eigvals(A))))
        try:
            Y = sla.solve_continuous_lyapunov((A + beta * np.eye(n)).T,
                                              2.0 * C.T @ C)
            K = sla.solve(Y, C.T)
        except sla.LinAlgError:
            raise NotDetectableError("no stabilizing initial gain found")
        if np.max(np.real(sla.eigvals(A - K @ C))) >= 0:
            raise NotDetectableError("(A, C) pair appears undetectable")
    P = np.zeros((n, n))
    Rinv = sla.inv(R)
    for _ in range(100):
        Ak = A - K @ C
        try:
            P = lyap_solve(Ak, Q + K @ R @ K.T)
        except UnstableError:
            raise NumericalError("Newton-Kleinman iterate lost stability")
        K_new = P @ C.T @ Rinv
        if sla.norm(K_new - K) <= 1e-12 * max(1.0, sla.norm(K_new)):
            K = K_new
            break
        K = K_new
    res = sla.norm(A @ P + P @ A.T - P @ C.T @ Rinv @ C @ P + Q)
    # guard scales with the problem's own magnitude; ill conditioning shows
    # up as ||P||^2 amplification of round-off
    scale = max(1.0, sla.norm(Q),
                1e-6 * sla.norm(P)**2 * sla.norm(C.T @ Rinv @ C))
    if res > 1e-8 * scale:
        raise NumericalError(f"CARE residual too large: {res:g}")
    if n and np.max(np.real(sla.eigvals(A - K @ C))) >= 0:
        raise NumericalError("CARE closed loop not Hurwitz")
    return P, K


# ---------------------------------------------------------------------------
# time simulation

def simulate(G: StateSpace, inputs: SignalTrace, x0=None) -> SignalTrace:
    """Zero-order-hold exact discretization of ``G`` driven by ``inputs``."""
    u = inputs.matrix(G.input_labels) if G.n_inputs else \
        np.zeros((inputs.n_samples, 0))
    n, m = G.n_states, G.n_inputs
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (n,):
        raise DimensionError(f"x0 must have {n} entries")
    if n:
        blk = np.zeros((n + m, n + m))
        blk[:n, :n] = G.A
        blk[:n, n:] = G.B
        ed = sla.expm(blk * inputs.dt)
        Ad, Bd = ed[:n, :n], ed[:n, n:]
    y = np.empty((inputs.n_samples, G.n_outputs))
    for k in range(inputs.n_samples):
        y[k] = G.C @ x + G.D @ u[k]
        if n:
            x = Ad @ x + Bd @ u[k]
    return SignalTrace(inputs.dt,
                       {lbl: y[:, i] for i, lbl in enumerate(G.output_labels)})
