"""Truncated spectral model, time grid, coefficients and scenario files.

The generator ``A`` is represented by its eigenvalues only: in the
eigenbasis the semigroup is ``diag(exp(lambda_j s))``, valid for both signs
of ``s``.  Coefficients are piecewise constant in time; the value stored at
node ``i`` holds on the cell ``[s_i, s_{i+1})``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AsymmetryError, DimensionMismatch, ParseError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

SYMMETRY_TOL = 1e-12

COEFFICIENT_NAMES = ("A1", "B", "C", "D", "Q", "R", "G")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Eigenvalues of ``A`` in a fixed orthonormal eigenbasis.

    Parameters
    ----------
    lam : array_like, shape (n,)
        Eigenvalues ``lambda_j`` (1/time).
    horizon_T : float
        Final time.
    """

    lam: np.ndarray
    horizon_T: float

    def __post_init__(self):
        lam = _frozen(np.atleast_1d(self.lam))
        if lam.ndim != 1 or lam.size < 1:
            raise DimensionMismatch("lambda must be a non-empty vector")
        if not np.all(np.isfinite(lam)):
            raise ParseError("eigenvalues must be finite")
        if not self.horizon_T > 0:
            raise ParseError("horizon T must be positive")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "horizon_T", float(self.horizon_T))

    @property
    def n(self) -> int:
        return self.lam.size

    def exp_diag(self, s: float) -> np.ndarray:
        """Diagonal of ``exp(A s)``."""
        return np.exp(self.lam * s)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = s_0 < ... < s_m = T``."""

    t0: float
    T: float
    m: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.T)) or not self.t0 < self.T:
            raise ParseError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.m) != self.m or self.m < 1:
            raise ParseError(f"grid step count must be a positive integer, got {self.m}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "m", int(self.m))
        nodes = self.t0 + (self.T - self.t0) * np.arange(self.m + 1) / self.m
        nodes[-1] = self.T
        object.__setattr__(self, "nodes", _frozen(nodes))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.m

    def refined(self, m: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, m)


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """Matrix path given by breakpoints: ``values[i]`` holds from ``times[i]`` on."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _frozen(np.atleast_1d(self.times))
        values = _frozen(self.values)
        if values.ndim != 3 or values.shape[0] != times.size:
            raise DimensionMismatch("breakpoint times and matrices disagree in length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ParseError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value) -> "PiecewiseConstant":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(np.array([-np.inf]), value[None])

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def sample(self, grid: TimeGrid) -> np.ndarray:
        # nudge nodes so a breakpoint that sits on a node is not lost to rounding
        probe = grid.nodes + 1e-9 * grid.dt
        idx = np.searchsorted(self.times, probe, side="right") - 1
        return self.values[np.clip(idx, 0, None)]


def _symmetrize(name, arr):
    """Check symmetry of a stack of matrices to SYMMETRY_TOL and symmetrize."""
    arr = np.asarray(arr, dtype=float)
    dev = np.abs(arr - np.swapaxes(arr, -1, -2))
    if dev.size and dev.max() > SYMMETRY_TOL:
        raise AsymmetryError(
            f"{name} is not symmetric (max |M - M'| = {dev.max():.3e})"
        )
    return 0.5 * (arr + np.swapaxes(arr, -1, -2))


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficient paths sampled at the nodes of ``grid``.

    ``A1, C, Q`` have shape (m+1, n, n), ``B, D`` (m+1, n, k), ``R``
    (m+1, k, k) and ``G`` (n, n).  ``sources`` keeps the breakpoint form so
    the set can be resampled on another grid.
    """

    grid: TimeGrid
    A1: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    sources: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m1 = self.grid.m + 1
        for name in ("A1", "B", "C", "D", "Q", "R"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 2:
                a = np.broadcast_to(a, (m1,) + a.shape)
            if a.ndim != 3 or a.shape[0] != m1:
                raise DimensionMismatch(f"{name} must be one matrix per grid node")
            if name in ("Q", "R"):
                a = _symmetrize(name, a)
            object.__setattr__(self, name, _frozen(a))
        object.__setattr__(self, "G", _frozen(_symmetrize("G", np.atleast_2d(self.G))))
        n, k = self.n, self.k
        expect = {"A1": (n, n), "B": (n, k), "C": (n, n), "D": (n, k),
                  "Q": (n, n), "R": (k, k)}
        for name, shp in expect.items():
            if getattr(self, name).shape[1:] != shp:
                raise DimensionMismatch(
                    f"{name} has shape {getattr(self, name).shape[1:]}, expected {shp}"
                )
        if self.G.shape != (n, n):
            raise DimensionMismatch(f"G has shape {self.G.shape}, expected {(n, n)}")
        for name in COEFFICIENT_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParseError(f"{name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.A1.shape[1]

    @property
    def k(self) -> int:
        return self.B.shape[2]

    @classmethod
    def from_sources(cls, grid: TimeGrid, sources: dict) -> "CoefficientSet":
        """Sample breakpoint paths (``PiecewiseConstant`` per name) on ``grid``."""
        arrays = {}
        for name in ("A1", "B", "C", "D", "Q", "R"):
            arrays[name] = sources[name].sample(grid)
        G = sources["G"]
        if isinstance(G, PiecewiseConstant):
            G = G.values[-1]
        return cls(grid=grid, G=G, sources=dict(sources), **arrays)

    def resample(self, grid: TimeGrid) -> "CoefficientSet":
        if self.sources is None:
            srcs = {name: PiecewiseConstant(self.grid.nodes, getattr(self, name))
                    for name in ("A1", "B", "C", "D", "Q", "R")}
            srcs["G"] = self.G
        else:
            srcs = self.sources
        return CoefficientSet.from_sources(grid, srcs)

    def jump_nodes(self) -> np.ndarray:
        """Boolean mask of nodes where some coefficient changes value."""
        jumps = np.zeros(self.grid.m + 1, dtype=bool)
        for name in ("A1", "B", "C", "D", "Q", "R"):
            a = getattr(self, name)
            d = np.any(a[1:] != a[:-1], axis=(1, 2))
            jumps[1:] |= d
        return jumps


@dataclass(frozen=True, eq=False)
class Scenario:
    """A complete problem instance: model, grid, coefficients, initial state."""

    model: SpectralModel
    grid: TimeGrid
    coeffs: CoefficientSet
    eta: np.ndarray
    seed: int = 0
    mc_paths: int = 10_000

    def __post_init__(self):
        eta = _frozen(np.atleast_1d(self.eta))
        object.__setattr__(self, "eta", eta)
        n = self.model.n
        if self.coeffs.n != n or eta.shape != (n,):
            raise DimensionMismatch(
                f"state dimension mismatch: lambda has {n}, coefficients "
                f"{self.coeffs.n}, eta {eta.shape}"
            )
        if self.coeffs.grid != self.grid:
            raise DimensionMismatch("coefficients sampled on a different grid")
        if abs(self.grid.T - self.model.horizon_T) > 1e-12:
            raise DimensionMismatch("grid end differs from model horizon")
        if not 0 <= int(self.seed) < 2**64:
            raise ParseError("seed must be a 64-bit unsigned integer")
        if int(self.mc_paths) < 1:
            raise ParseError("mc_paths must be positive")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "mc_paths", int(self.mc_paths))
        if not np.all(np.isfinite(eta)):
            raise ParseError("eta has non-finite entries")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def k(self) -> int:
        return self.coeffs.k

    @property
    def lam(self) -> np.ndarray:
        return self.model.lam

    def regrid(self, m: int) -> "Scenario":
        grid = self.grid.refined(m)
        return replace(self, grid=grid, coeffs=self.coeffs.resample(grid))

    def with_(self, **coeffs) -> "Scenario":
        """Copy with some coefficient node arrays (or constants) replaced."""
        kw = {name: getattr(self.coeffs, name) for name in COEFFICIENT_NAMES}
        kw.update(coeffs)
        return replace(self, coeffs=CoefficientSet(grid=self.grid, **kw))


def make_scenario(lam, *, T=1.0, m=100, t0=0.0, k=None, eta=None, seed=0,
                  mc_paths=10_000, **coeffs) -> Scenario:
    """Build a scenario from constant (or per-node) coefficient arrays.

    Omitted coefficients are zero; ``R`` defaults to zero as well.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    n = lam.size
    if k is None:
        for name in ("B", "D", "R"):
            if name in coeffs:
                a = np.atleast_2d(np.asarray(coeffs[name], dtype=float))
                k = a.shape[-1]
                break
        else:
            k = n
    grid = TimeGrid(t0, T, m)
    shapes = {"A1": (n, n), "B": (n, k), "C": (n, n), "D": (n, k),
              "Q": (n, n), "R": (k, k), "G": (n, n)}
    arrays = {}
    for name, shp in shapes.items():
        v = coeffs.pop(name, None)
        if v is None:
            v = np.zeros(shp)
        v = np.asarray(v, dtype=float)
        if v.ndim < 2 and name != "G":
            v = np.broadcast_to(v, shp) if v.ndim == 0 else v.reshape(shp)
        elif name == "G":
            v = np.broadcast_to(v, shp) if v.ndim == 0 else np.atleast_2d(v)
        arrays[name] = v
    if coeffs:
        raise TypeError(f"unknown coefficients: {sorted(coeffs)}")
    eta = np.zeros(n) if eta is None else eta
    model = SpectralModel(lam, T)
    return Scenario(model, grid, CoefficientSet(grid=grid, **arrays), eta,
                    seed=seed, mc_paths=mc_paths)


def semigroup_apply(model: SpectralModel, s: float, v) -> np.ndarray:
    """Return ``exp(A s) v``; negative ``s`` is allowed (group)."""
    return model.exp_diag(s) * np.asarray(v, dtype=float)


def project(model: SpectralModel, n_sub: int, v) -> np.ndarray:
    """Zero the coordinates beyond the first ``n_sub`` eigenmodes."""
    if not 1 <= n_sub <= model.n:
        raise IndexError(f"n_sub={n_sub} outside 1..{model.n}")
    out = np.array(v, dtype=float)
    out[..., n_sub:] = 0.0
    return out


def project_scenario(sc: Scenario, n_sub: int) -> Scenario:
    """Galerkin truncation of a scenario to its first ``n_sub`` modes.

    State-space blocks are cut to the leading ``n_sub`` rows/columns; the
    control space is kept whole.
    """
    if not 1 <= n_sub <= sc.n:
        raise IndexError(f"n_sub={n_sub} outside 1..{sc.n}")
    c = sc.coeffs
    s = slice(0, n_sub)
    coeffs = CoefficientSet(
        grid=sc.grid,
        A1=c.A1[:, s, s], B=c.B[:, s, :], C=c.C[:, s, s], D=c.D[:, s, :],
        Q=c.Q[:, s, s], R=c.R, G=c.G[s, s],
    )
    model = SpectralModel(sc.lam[s], sc.model.horizon_T)
    return replace(sc, model=model, coeffs=coeffs, eta=sc.eta[s])


# ---------------------------------------------------------------------------
# scenario files


def _matrix(name, raw, shape):
    try:
        a = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{name}: not a numeric matrix") from exc
    if a.ndim == 0 and shape == (1, 1):
        a = a.reshape(1, 1)
    if a.ndim == 1 and shape[0] == 1:
        a = a[None, :]
    if a.ndim == 1 and shape[1] == 1:
        a = a[:, None]
    if a.ndim == 0 or a.shape != shape:
        raise DimensionMismatch(f"{name}: expected shape {shape}, got {np.shape(raw)}")
    return a


def _coefficient_source(name, raw, shape, t0):
    if raw is None:
        return PiecewiseConstant.constant(np.zeros(shape))
    if isinstance(raw, list) and raw and isinstance(raw[0], dict):
        times, values = [], []
        for bp in raw:
            if "time" not in bp or "value" not in bp:
                raise ParseError(f"{name}: breakpoint needs 'time' and 'value'")
            times.append(float(bp["time"]))
            values.append(_matrix(name, bp["value"], shape))
        if times[0] > t0:
            raise ParseError(f"{name}: first breakpoint must be at or before t0")
        times[0] = -np.inf
        return PiecewiseConstant(np.array(times), np.array(values))
    if isinstance(raw, dict) and "diag" in raw:
        d = np.array(raw["diag"], dtype=float)
        if d.shape != (min(shape),) or shape[0] != shape[1]:
            raise DimensionMismatch(f"{name}: diag needs {shape[0]} entries")
        return PiecewiseConstant.constant(np.diag(d))
    return PiecewiseConstant.constant(_matrix(name, raw, shape))


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a parsed scenario document (TOML or JSON form)."""
    try:
        n = int(doc["n"])
        k = int(doc.get("k", n))
        lam = np.array(doc["lambda"], dtype=float)
        T = float(doc["T"])
        t0 = float(doc.get("t0", 0.0))
        m = int(doc.get("m", doc.get("grid", {}).get("m", 100)))
    except KeyError as exc:
        raise ParseError(f"missing required key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad scalar field: {exc}") from exc
    if n < 1 or k < 1:
        raise DimensionMismatch("n and k must be positive")
    if lam.shape != (n,):
        raise DimensionMismatch(f"lambda has {lam.size} entries, n = {n}")
    raw = doc.get("coefficients", {})
    unknown = set(raw) - set(COEFFICIENT_NAMES)
    if unknown:
        raise ParseError(f"unknown coefficient blocks {sorted(unknown)}")
    shapes = {"A1": (n, n), "B": (n, k), "C": (n, n), "D": (n, k),
              "Q": (n, n), "R": (k, k), "G": (n, n)}
    sources = {name: _coefficient_source(name, raw.get(name), shapes[name], t0)
               for name in COEFFICIENT_NAMES}
    sources["G"] = sources["G"].values[-1]
    grid = TimeGrid(t0, T, m)
    coeffs = CoefficientSet.from_sources(grid, sources)
    eta = np.array(doc.get("eta", np.zeros(n)), dtype=float)
    if eta.shape != (n,):
        raise DimensionMismatch(f"eta has shape {eta.shape}, n = {n}")
    return Scenario(SpectralModel(lam, T), grid, coeffs, eta,
                    seed=int(doc.get("seed", 0)),
                    mc_paths=int(doc.get("mc_paths", 10_000)))


def load_scenario(path) -> Scenario:
    """Read a ``.toml`` or ``.json`` scenario file.

    Raises
    ------
    ParseError
        Malformed file or missing fields.
    DimensionMismatch
        Inconsistent ``n``/``k`` across members.
    AsymmetryError
        ``Q``, ``R`` or ``G`` non-symmetric beyond 1e-12.
    """
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = _toml.loads(text)
    except (ValueError, _toml.TOMLDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a table")
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    """JSON-ready document for a scenario (constant-in-time blocks collapsed)."""
    c = sc.coeffs
    coeffs = {}
    for name in ("A1", "B", "C", "D", "Q", "R"):
        a = getattr(c, name)
        if np.all(a == a[0]):
            coeffs[name] = a[0].tolist()
        else:
            change = np.concatenate([[True], np.any(a[1:] != a[:-1], axis=(1, 2))])
            coeffs[name] = [{"time": float(sc.grid.nodes[i]), "value": a[i].tolist()}
                            for i in np.flatnonzero(change)]
    coeffs["G"] = c.G.tolist()
    return {"n": sc.n, "k": sc.k, "lambda": sc.lam.tolist(), "T": sc.grid.T,
            "t0": sc.grid.t0, "m": sc.grid.m, "eta": sc.eta.tolist(),
            "seed": sc.seed, "mc_paths": sc.mc_paths, "coefficients": coeffs}
