"""Odd CZ kernels and the operators they induce on atomic measures.

Kernels act on difference vectors ``z = x - y`` of shape (..., d).  The
truncated operator at an atom x_i is

    T_eps(f mu)(x_i) = sum_{j : |x_i - x_j| >= eps, j != i} K(x_i - x_j) f_j w_j,

and all L^2 quantities use the mu-weighted inner product
``<f, g>_mu = sum_i f_i g_i w_i``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .measure import Measure

log = logging.getLogger(__name__)


def _smoothstep_down(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C^1 cubic from 1 (u <= 0) to 0 (u >= 1) and its derivative."""
    u = np.clip(u, 0.0, 1.0)
    return 1 - 3 * u ** 2 + 2 * u ** 3, -6 * u + 6 * u ** 2


@dataclass(frozen=True)
class OddBump:
    """phi(x) = c * x_axis * h(|x| / M): odd, C^1, supported in B(0, M).

    ``h`` equals 1 on [0, plateau] and falls to 0 at 1 by a cubic
    smoothstep.  ``c`` rescales the Lipschitz norm to ``lip`` (default 1).
    """

    M: float = 1.0
    plateau: float = 0.5
    axis: int = 0
    lip: float = 1.0
    scale: float = field(init=False, default=1.0)

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("support radius must be positive")
        if not 0 <= self.plateau < 1:
            raise ValueError("plateau must lie in [0, 1)")
        object.__setattr__(self, "scale", self.lip / self.raw_lipschitz())

    def _profile(self, r):
        span = 1.0 - self.plateau
        h, dh = _smoothstep_down((np.asarray(r, float) / self.M - self.plateau) / span)
        return h, dh / (span * self.M)

    def raw_lipschitz(self, samples: int = 200_001) -> float:
        # |grad(x_1 H(|x|))| is maximised along or across the axis:
        # sup_r max(|H(r)|, |H(r) + r H'(r)|)
        r = np.linspace(0.0, self.M, samples)
        H, dH = self._profile(r)
        return float(np.max(np.maximum(np.abs(H), np.abs(H + r * dH))))

    @property
    def support_radius(self) -> float:
        return self.M

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r = np.sqrt(np.einsum("...k,...k->...", z, z))
        H, _ = self._profile(r)
        return self.scale * z[..., self.axis] * H

    def lipschitz_certificate(self, d: int, n: int = 20_000, seed: int = 0) -> float:
        """Largest sampled difference quotient; should not exceed ``lip``."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.2 * self.M, 1.2 * self.M, size=(n, d))
        y = x + rng.normal(scale=0.05 * self.M, size=(n, d))
        num = np.abs(self(x) - self(y))
        den = np.sqrt(((x - y) ** 2).sum(axis=1))
        return float(np.max(num / den))


@dataclass(frozen=True)
class BallRamp:
    """Odd Lipschitz approximation of chi_{-B} - chi_B for B = B(z, r).

    Each indicator is replaced by the ramp ``clip(steep (r - |x - c|), 0, 1)``;
    as ``steep`` grows the ramps increase to the open-ball indicators.
    """

    z: tuple[float, ...]
    r: float
    steep: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(self.z, dtype=float)

        def ramp(c):
            dist = np.sqrt(((x - c) ** 2).sum(axis=-1))
            return np.clip(self.steep * (self.r - dist), 0.0, 1.0)

        return ramp(-z) - ramp(z)

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.z)) + self.r


def bump_family(n: int, d: int = 1, plateaus=(0.25, 0.5, 0.75)) -> list[OddBump]:
    """A finite surrogate for a dense family of odd Lip_0 bumps: phi_j in Lip_0(B(0, j))."""
    out = []
    for j in range(1, n + 1):
        out.append(OddBump(M=float(j), plateau=plateaus[(j - 1) % len(plateaus)], axis=(j - 1) % d))
    return out


# -- kernels ----------------------------------------------------------------

class Kernel:
    kind = "abstract"
    components = 1

    def __call__(self, z) -> np.ndarray:
        raise NotImplementedError


@dataclass
class RieszKernel(Kernel):
    """K(x) = x / |x|^(s+1); vector valued for d > 1 unless ``component`` is set."""

    s: float
    component: int | None = None
    kind: str = "riesz"

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r = np.sqrt(np.einsum("...k,...k->...", z, z))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r > 0, r ** (-self.s - 1), 0.0)
        if self.component is not None:
            return z[..., self.component] * inv
        if z.shape[-1] == 1:
            return z[..., 0] * inv
        return np.moveaxis(z * inv[..., None], -1, 0)

    def n_components(self, d: int) -> int:
        return 1 if (self.component is not None or d == 1) else d


@dataclass
class SmoothKernel(Kernel):
    phi: OddBump
    kind: str = "smooth"

    def __call__(self, z) -> np.ndarray:
        return self.phi(z)

    def n_components(self, d: int) -> int:
        return 1


@dataclass
class RandomCompositeKernel(Kernel):
    """K(x) = sum_{|n| <= n0} sign_n 3^(-s) 2^(-n s) phi(x / 2^n)."""

    phi: OddBump
    s: float
    n0: int
    signs: np.ndarray
    certificate: dict = field(default_factory=dict)
    kind: str = "random"

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1])
        for n, sgn in zip(range(-self.n0, self.n0 + 1), self.signs):
            scale = 2.0 ** n
            out += sgn * 3.0 ** (-self.s) * scale ** (-self.s) * self.phi(z / scale)
        return out

    def n_components(self, d: int) -> int:
        return 1


def cz_certificates(K: Kernel, d: int, s: float, radii, directions=None, fd_step: float = 1e-5) -> dict:
    """sup |K(x)| |x|^s and sup |grad K(x)| |x|^(s+1) over sampled x.

    Gradients by central differences with step ``fd_step * |x|``.
    """
    radii = np.asarray(radii, dtype=float)
    if directions is None:
        directions = np.eye(d)[:1]
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    x = (radii[:, None, None] * directions[None, :, :]).reshape(-1, d)
    r = np.sqrt((x ** 2).sum(axis=1))
    val = np.abs(np.asarray(K(x)))
    if val.ndim > 1:
        val = np.sqrt((val ** 2).sum(axis=0))
    grad_sq = np.zeros(len(x))
    for ax in range(d):
        e = np.zeros(d)
        e[ax] = 1.0
        h = (fd_step * r)[:, None] * e
        diff = (np.asarray(K(x + h)) - np.asarray(K(x - h))) / (2 * fd_step * r)
        grad_sq += diff ** 2 if diff.ndim == 1 else (diff ** 2).sum(axis=0)
    return {
        "size": float(np.max(val * r ** s)),
        "gradient": float(np.max(np.sqrt(grad_sq) * r ** (s + 1))),
        "n_samples": int(len(x)),
    }


def random_kernel(phi: OddBump, n0: int, seed: int, s: float, d: int = 1,
                  n_radii: int = 1000) -> RandomCompositeKernel:
    """Random-sign composite kernel with i.i.d. +-1 signs drawn from ``seed``."""
    if n0 < 0:
        raise ValueError("n0 must be non-negative")
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=2 * n0 + 1)
    K = RandomCompositeKernel(phi, s, n0, signs)
    radii = np.logspace(math.log10(phi.M * 2.0 ** (-n0 - 3)), math.log10(phi.M * 2.0 ** (n0 + 1)), n_radii)
    K.certificate.update(cz_certificates(K, max(d, phi.axis + 1), s, radii))
    return K


# -- operators --------------------------------------------------------------

def kernel_matrix(K: Kernel, mu: Measure, epsilon: float = 0.0) -> np.ndarray:
    """B[c, i, j] = K_c(x_i - x_j) for |x_i - x_j| >= epsilon and i != j, else 0."""
    pts = mu.points
    z = pts[:, None, :] - pts[None, :, :]
    B = np.asarray(K(z), dtype=float)
    if B.ndim == 2:
        B = B[None]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", z, z))
    mask = dist >= epsilon
    np.fill_diagonal(mask, False)
    return np.where(mask[None], B, 0.0)


def truncated_apply(K: Kernel, mu: Measure, f, epsilon: float) -> np.ndarray:
    """T_eps(f mu) at every atom; shape (n,) or (components, n)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    f = np.asarray(f, dtype=float)
    B = kernel_matrix(K, mu, epsilon)
    out = B @ (f * mu.weights)
    return out[0] if out.shape[0] == 1 else out


def pairing(mu: Measure, f, g) -> float:
    return float(np.sum(np.asarray(f) * np.asarray(g) * mu.weights))


@dataclass
class NormEstimate:
    norm: float
    residual: float
    iterations: int
    converged: bool


def operator_norm(K: Kernel, mu: Measure, epsilon: float, iters: int = 200, seed: int = 0,
                  tol: float = 1e-8, matrix: np.ndarray | None = None, block: int = 16) -> NormEstimate:
    """Largest singular value of T_eps on L^2(mu) by block power iteration on T*T.

    Works with C = W^(1/2) B W^(1/2) (components stacked), whose singular
    values are those of T_eps on L^2(mu).  A block of ``block`` vectors is
    iterated with a Rayleigh-Ritz step each round; odd kernels give
    antisymmetric matrices whose singular values come in pairs, which stalls
    single-vector iteration.  The residual is ``|C^T C u - rho u| / rho``
    for the top Ritz vector u.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    w = mu.weights
    if len(w) == 0 or not np.any(w > 0):
        return NormEstimate(0.0, 0.0, 0, True)
    B = kernel_matrix(K, mu, epsilon) if matrix is None else matrix
    c, n = B.shape[0], len(w)
    sq = np.sqrt(w)
    C = (B * sq[None, None, :] * sq[None, :, None]).reshape(c * n, n)
    k = max(1, min(block, n))
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, k)))
    rho, res = 0.0, math.inf
    it = 0
    for it in range(1, iters + 1):
        Y = C.T @ (C @ V)
        H = V.T @ Y
        vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
        rho = float(vals[-1])
        if rho <= 0:
            return NormEstimate(0.0, 0.0, it, True)
        u = V @ vecs[:, -1]
        r = Y @ vecs[:, -1] - rho * u
        res = float(np.linalg.norm(r)) / rho
        if res < tol:
            break
        V, _ = np.linalg.qr(Y)
    return NormEstimate(math.sqrt(rho), res, it, res < tol)


def operator_norm_dense(K: Kernel, mu: Measure, epsilon: float) -> float:
    """Same norm from a dense SVD of W^(1/2) B W^(1/2) (components stacked)."""
    w = mu.weights
    if len(w) == 0:
        return 0.0
    B = kernel_matrix(K, mu, epsilon)
    sq = np.sqrt(w)
    C = (sq[None, :, None] * B * sq[None, None, :]).reshape(-1, len(w))
    return float(np.linalg.svd(C, compute_uv=False)[0])


def operator_norm_sup(K: Kernel, mu: Measure, iters: int = 200, seed: int = 0,
                      tol: float = 1e-8) -> tuple[float, float]:
    """max over epsilon in {r_min 2^k} up to the diameter; returns (norm, argmax epsilon)."""
    r0 = mu.r_min
    diam = max(mu.diameter(), r0)
    best, arg = 0.0, r0
    eps = r0
    while eps <= diam:
        est = operator_norm(K, mu, eps, iters, seed, tol)
        if est.norm > best:
            best, arg = est.norm, eps
        eps *= 2
    return best, arg


def smoothing_operator(phi, mu: Measure, ell: float, s: float) -> np.ndarray:
    """Matrix of T_{phi, ell}: entries ell^(-s) phi(3 (x_i - x_j) / ell)."""
    z = mu.points[:, None, :] - mu.points[None, :, :]
    return ell ** (-s) * np.asarray(phi(3.0 * z / ell), dtype=float)


def smoothing_apply(phi, mu: Measure, f, ell: float, s: float) -> np.ndarray:
    """T_{phi, ell}(f mu) at the atoms."""
    return smoothing_operator(phi, mu, ell, s) @ (np.asarray(f, dtype=float) * mu.weights)


def square_function(phi, mu: Measure, f, levels, s: float) -> float:
    """sum over n in ``levels`` of |T_{phi, 3 2^n}(f mu)|^2_{L^2(mu)}."""
    total = 0.0
    for n in levels:
        v = smoothing_apply(phi, mu, f, 3.0 * 2.0 ** n, s)
        total += pairing(mu, v, v)
    return total


def smoothing_field(phi, mu: Measure, ell: float | None, s: float, targets=None) -> np.ndarray:
    """T_{phi, ell}(mu) at ``targets`` (default: the atoms).

    With ``ell=None`` the unscaled convolution ``sum_j phi(x - x_j) w_j`` is
    returned instead.
    """
    tgt = mu.points if targets is None else np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.empty(len(tgt))
    rows = max(1, 2_000_000 // max(len(mu), 1))
    for a in range(0, len(tgt), rows):
        z = tgt[a:a + rows, None, :] - mu.points[None, :, :]
        if ell is None:
            vals = np.asarray(phi(z), dtype=float)
        else:
            vals = ell ** (-s) * np.asarray(phi(3.0 * z / ell), dtype=float)
        out[a:a + rows] = vals @ mu.weights
    return out


def parse_kernel(spec: str, s: float, seed: int = 0) -> Kernel:
    """``riesz``, ``smooth:<M>`` or ``random:<M>,<n0>``."""
    kind, _, arg = spec.partition(":")
    if kind == "riesz":
        return RieszKernel(s)
    if kind == "smooth":
        return SmoothKernel(OddBump(M=float(arg or 1.0)))
    if kind == "random":
        M, _, n0 = arg.partition(",")
        return random_kernel(OddBump(M=float(M or 1.0)), int(n0 or 4), seed, s)
    raise ValueError(f"unknown kernel spec {spec!r}")
