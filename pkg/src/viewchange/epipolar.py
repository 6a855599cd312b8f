"""Epipolar outlier rejection: five-point minimal solver inside RANSAC.

Pixels are lifted to unit bearings through a camera model (pinhole or
equirectangular), so one angular residual serves both projective and
panoramic imagery. The minimal solver recovers up to ten essential-matrix
candidates from five correspondences via the classic nullspace /
Gauss-Jordan / degree-10 resultant elimination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, InsufficientDataError, NoModelError
from .matching import MatchSet

DET_TOL = 1e-8
TRACE_TOL = 1e-6
SAMPLE_RESIDUAL_TOL = 1e-8


# ---------------------------------------------------------------------------
# Camera models and bearings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    kind: str                      # "pinhole" | "equirectangular"
    width: int
    height: int
    fx: float = 0.0
    fy: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    span_h: float = 2.0 * math.pi
    span_v: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pinhole", "equirectangular"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera dims must be positive")
        if self.kind == "pinhole" and (self.fx <= 0 or self.fy <= 0):
            raise ValueError("pinhole focal lengths must be positive")
        if self.kind == "equirectangular":
            span_v = self.span_v if self.span_v > 0 else self.span_h * self.height / self.width
            if not (0 < self.span_h <= 2 * math.pi) or not (0 < span_v <= 2 * math.pi):
                raise ValueError("equirectangular spans must lie in (0, 2*pi]")
            object.__setattr__(self, "span_v", span_v)

    @staticmethod
    def pinhole(width: int, height: int, fx: float, fy: float,
                cx: float | None = None, cy: float | None = None) -> "CameraModel":
        cx = width / 2.0 if cx is None else cx
        cy = height / 2.0 if cy is None else cy
        return CameraModel("pinhole", width, height, fx=fx, fy=fy, cx=cx, cy=cy)

    @staticmethod
    def equirectangular(width: int, height: int, span_h: float = 2.0 * math.pi,
                        span_v: float | None = None) -> "CameraModel":
        return CameraModel(
            "equirectangular", width, height,
            span_h=span_h, span_v=0.0 if span_v is None else span_v,
        )


def pixels_to_bearings(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """(N, 2) pixel coordinates to (N, 3) unit bearings."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y = pts[:, 0], pts[:, 1]
    if cam.kind == "pinhole":
        b = np.stack([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, np.ones_like(x)], axis=1)
    else:
        lon = (x / cam.width - 0.5) * cam.span_h
        lat = (0.5 - y / cam.height) * cam.span_v
        b = np.stack(
            [np.cos(lat) * np.sin(lon), -np.sin(lat), np.cos(lat) * np.cos(lon)], axis=1
        )
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def pixel_to_bearing(p, cam: CameraModel) -> np.ndarray:
    return pixels_to_bearings(np.asarray(p, dtype=np.float64)[None, :], cam)[0]


def bearings_to_pixels(bearings: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Inverse projection; pinhole requires positive z."""
    b = np.atleast_2d(np.asarray(bearings, dtype=np.float64))
    if cam.kind == "pinhole":
        if np.any(b[:, 2] <= 0):
            raise ValueError("pinhole projection needs bearings with positive z")
        x = cam.cx + cam.fx * b[:, 0] / b[:, 2]
        y = cam.cy + cam.fy * b[:, 1] / b[:, 2]
    else:
        b = b / np.linalg.norm(b, axis=1, keepdims=True)
        lon = np.arctan2(b[:, 0], b[:, 2])
        lat = np.arcsin(np.clip(-b[:, 1], -1.0, 1.0))
        x = (lon / cam.span_h + 0.5) * cam.width
        y = (0.5 - lat / cam.span_v) * cam.height
    return np.stack([x, y], axis=1)


# ---------------------------------------------------------------------------
# Essential matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EssentialMatrix:
    """3x3 epipolar model, stored with unit Frobenius norm.

    Satisfies det(E) = 0 and 2 E E^T E - trace(E E^T) E = 0 to tight
    tolerances; construction rejects matrices that do not.
    """

    m: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.m, dtype=np.float64)
        if arr.shape != (3, 3):
            raise ValueError(f"essential matrix must be 3x3, got {arr.shape}")
        norm = np.linalg.norm(arr)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError("essential matrix must be finite and non-zero")
        arr = arr / norm
        if abs(np.linalg.det(arr)) > DET_TOL:
            raise ValueError("det(E) exceeds tolerance; not an essential matrix")
        if np.abs(_trace_constraint(arr)).max() > TRACE_TOL:
            raise ValueError("2*E*E'*E - tr(E*E')*E exceeds tolerance")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "m", arr)


def _trace_constraint(e: np.ndarray) -> np.ndarray:
    eet = e @ e.T
    return 2.0 * eet @ e - np.trace(eet) * e


def skew(t: np.ndarray) -> np.ndarray:
    tx, ty, tz = np.asarray(t, dtype=np.float64)
    return np.array([[0.0, -tz, ty], [tz, 0.0, -tx], [-ty, tx, 0.0]])


# ---------------------------------------------------------------------------
# Five-point minimal solver
# ---------------------------------------------------------------------------
# Monomial bases. Degree-3 columns are arranged so that Gauss-Jordan
# elimination leaves rows whose z-polynomial structure can be read off
# directly (x- and y-carrying monomials grouped, pure-z monomials last).

_EXP1 = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_EXP2 = [
    (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1),
    (0, 0, 2), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0),
]
_EXP3 = [
    (3, 0, 0), (0, 3, 0), (2, 1, 0), (1, 2, 0), (2, 0, 1),
    (2, 0, 0), (0, 2, 1), (0, 2, 0), (1, 1, 1), (1, 1, 0),
    (1, 0, 2), (1, 0, 1), (1, 0, 0), (0, 1, 2), (0, 1, 1),
    (0, 1, 0), (0, 0, 3), (0, 0, 2), (0, 0, 1), (0, 0, 0),
]
_IDX2 = {e: i for i, e in enumerate(_EXP2)}
_IDX3 = {e: i for i, e in enumerate(_EXP3)}


def _mul_table(exps_a, exps_b, idx_out) -> np.ndarray:
    table = np.empty((len(exps_a), len(exps_b)), dtype=np.intp)
    for i, ea in enumerate(exps_a):
        for j, eb in enumerate(exps_b):
            table[i, j] = idx_out[tuple(a + b for a, b in zip(ea, eb))]
    return table


_MUL11 = _mul_table(_EXP1, _EXP1, _IDX2)
_MUL21 = _mul_table(_EXP2, _EXP1, _IDX3)


def _poly_mul_11(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(10)
    np.add.at(out, _MUL11.ravel(), np.outer(a, b).ravel())
    return out


def _poly_mul_21(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(20)
    np.add.at(out, _MUL21.ravel(), np.outer(a, b).ravel())
    return out


def _cubic_constraints(basis: np.ndarray) -> np.ndarray:
    """10x20 coefficient matrix of det(E)=0 and 2EE'E - tr(EE')E = 0.

    ``basis`` is (4, 3, 3): E(x, y, z) = x*B0 + y*B1 + z*B2 + B3, and each
    entry of E is a degree-1 polynomial over the monomials (x, y, z, 1).
    """
    e = basis.transpose(1, 2, 0)  # (3, 3, 4): entry polynomials

    eet = np.zeros((3, 3, 10))
    for i in range(3):
        for k in range(3):
            acc = np.zeros(10)
            for j in range(3):
                acc += _poly_mul_11(e[i, j], e[k, j])
            eet[i, k] = acc
    trace = eet[0, 0] + eet[1, 1] + eet[2, 2]

    rows = np.zeros((10, 20))
    # det(E) via cofactor expansion along the first row.
    for j, (a, b) in enumerate(((1, 2), (0, 2), (0, 1))):
        minor = _poly_mul_11(e[1, a], e[2, b]) - _poly_mul_11(e[1, b], e[2, a])
        rows[0] += (-1.0) ** j * _poly_mul_21(minor, e[0, j])

    r = 1
    for i in range(3):
        for j in range(3):
            acc = np.zeros(20)
            for k in range(3):
                acc += 2.0 * _poly_mul_21(eet[i, k], e[k, j])
            acc -= _poly_mul_21(trace, e[i, j])
            rows[r] = acc
            r += 1
    return rows


def _gauss_jordan(a: np.ndarray) -> np.ndarray:
    """Reduce the left 10x10 block to the identity with partial pivoting."""
    m = a.copy()
    n = m.shape[0]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(m[col:, col])))
        if abs(m[piv, col]) < 1e-14:
            raise DegenerateSampleError("constraint system is rank deficient")
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
        m[col] /= m[col, col]
        others = [r for r in range(n) if r != col]
        m[others] -= np.outer(m[others, col], m[col])
    return m


def _row_minus_z_row(ra: np.ndarray, rb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """B-row polynomials of ra - z*rb over the trailing 10 monomials.

    ``ra``/``rb`` are coefficient rows over [xz^2, xz, x, yz^2, yz, y, z^3,
    z^2, z, 1]; returns (deg-3 x-poly, deg-3 y-poly, deg-4 constant poly),
    each highest power first.
    """
    bx = np.array([-rb[0], ra[0] - rb[1], ra[1] - rb[2], ra[2]])
    by = np.array([-rb[3], ra[3] - rb[4], ra[4] - rb[5], ra[5]])
    bc = np.array([-rb[6], ra[6] - rb[7], ra[7] - rb[8], ra[8] - rb[9], ra[9]])
    return bx, by, bc


def _polish_candidate(e: np.ndarray, null_rows: np.ndarray) -> np.ndarray:
    """Alternating projection onto the essential manifold and the span of
    the five-constraint null space.

    Near-multiple resultant roots limit back-substitution accuracy; a few
    projection rounds restore the defining invariants without leaving the
    constraint space. Exact candidates pass through unchanged.
    """
    for _ in range(12):
        u, s, vt0 = np.linalg.svd(e)
        sigma = 0.5 * (s[0] + s[1])
        on_manifold = (u * np.array([sigma, sigma, 0.0])) @ vt0
        coords = null_rows @ on_manifold.reshape(9)
        back = (null_rows.T @ coords).reshape(3, 3)
        if np.abs(back - e).max() < 1e-15:
            e = back
            break
        e = back
    return e


def five_point_essential(p: np.ndarray, q: np.ndarray) -> list[EssentialMatrix]:
    """All essential matrices fitting five bearing correspondences exactly.

    ``p`` and ``q`` are (5, 3) unit bearings from the first and second view;
    every returned candidate satisfies q_i' E p_i = 0 within 1e-8. Raises
    :class:`DegenerateSampleError` when the constraint matrix has rank < 5.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (5, 3) or q.shape != (5, 3):
        raise ValueError("five_point_essential expects (5, 3) bearing arrays")

    # q_i' E p_i = 0: row = outer(q_i, p_i) against row-major E.
    a = np.einsum("ni,nj->nij", q, p).reshape(5, 9)
    _, s, vt = np.linalg.svd(a)
    if s[4] < 1e-10 * max(s[0], 1e-300):
        raise DegenerateSampleError("five-point sample is rank deficient")
    null_rows = vt[5:9]
    basis = null_rows[::-1].reshape(4, 3, 3)  # x, y, z, 1 coefficients of E

    reduced = _gauss_jordan(_build_action_matrix(basis))
    b11, b12, b13 = _row_minus_z_row(reduced[4, 10:], reduced[5, 10:])
    b21, b22, b23 = _row_minus_z_row(reduced[6, 10:], reduced[7, 10:])
    b31, b32, b33 = _row_minus_z_row(reduced[8, 10:], reduced[9, 10:])

    p1 = np.convolve(b23, b12) - np.convolve(b13, b22)
    p2 = np.convolve(b13, b21) - np.convolve(b23, b11)
    p3 = np.convolve(b11, b22) - np.convolve(b12, b21)
    n = np.convolve(p1, b31) + np.convolve(p2, b32) + np.convolve(p3, b33)

    scale = np.abs(n).max()
    if scale == 0:
        return []
    n = n / scale
    lead = np.nonzero(np.abs(n) > 1e-12)[0]
    if lead.size == 0:
        return []
    roots = np.roots(n[lead[0]:])

    out: list[EssentialMatrix] = []
    for z in roots:
        if abs(z.imag) > 1e-6 * max(1.0, abs(z)):
            continue
        z0 = float(z.real)
        bmat = np.array([
            [np.polyval(b11, z0), np.polyval(b12, z0), np.polyval(b13, z0)],
            [np.polyval(b21, z0), np.polyval(b22, z0), np.polyval(b23, z0)],
            [np.polyval(b31, z0), np.polyval(b32, z0), np.polyval(b33, z0)],
        ])
        _, _, vtb = np.linalg.svd(bmat)
        v = vtb[-1]
        if abs(v[2]) < 1e-12 * np.linalg.norm(v):
            continue
        cand = v[0] * basis[0] + v[1] * basis[1] + v[2] * (z0 * basis[2] + basis[3])
        norm = np.linalg.norm(cand)
        if not np.isfinite(norm) or norm < 1e-14:
            continue
        cand = _polish_candidate(cand / norm, null_rows)
        norm = np.linalg.norm(cand)
        if not np.isfinite(norm) or norm < 1e-14:
            continue
        cand = cand / norm
        if np.abs(np.einsum("ni,ij,nj->n", q, cand, p)).max() > SAMPLE_RESIDUAL_TOL:
            continue
        if abs(np.linalg.det(cand)) > DET_TOL:
            continue
        if np.abs(_trace_constraint(cand)).max() > TRACE_TOL:
            continue
        if any(
            min(np.linalg.norm(cand - k.m), np.linalg.norm(cand + k.m)) < 1e-9
            for k in out
        ):
            continue
        out.append(EssentialMatrix(cand))
    return out


def _build_action_matrix(basis: np.ndarray) -> np.ndarray:
    return _cubic_constraints(basis)


# ---------------------------------------------------------------------------
# Residual scoring
# ---------------------------------------------------------------------------

def epipolar_residuals(e: EssentialMatrix | np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Symmetric angular distance of each (p, q) pair from the epipolar planes.

    residual = max( asin(|q'Ep| / (|Ep|*|q|)), asin(|p'E'q| / (|E'q|*|p|)) ),
    with a vanishing epipolar normal scored as pi/2.
    """
    m = e.m if isinstance(e, EssentialMatrix) else np.asarray(e, dtype=np.float64)
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    ep = p @ m.T
    etq = q @ m
    num = np.abs(np.einsum("ni,ni->n", q, ep))
    den1 = np.linalg.norm(ep, axis=1) * np.linalg.norm(q, axis=1)
    den2 = np.linalg.norm(etq, axis=1) * np.linalg.norm(p, axis=1)

    def _angle(den):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
        return np.where(
            np.isfinite(ratio), np.arcsin(np.clip(ratio, 0.0, 1.0)), np.pi / 2
        )

    return np.maximum(_angle(den1), _angle(den2))


def epipolar_residual(e: EssentialMatrix | np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return float(epipolar_residuals(e, np.asarray(p)[None], np.asarray(q)[None])[0])


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RansacConfig:
    seed: int = 0
    max_iters: int = 2000
    threshold: float = 0.005      # angular residual bound, radians
    confidence: float = 0.99

    def __post_init__(self):
        if self.max_iters < 1 or self.threshold <= 0 or not (0 < self.confidence < 1):
            raise ValueError("ransac config values out of range")


@dataclass(frozen=True)
class RansacResult:
    model: EssentialMatrix
    inlier_flags: np.ndarray
    iterations_run: int
    best_inlier_count: int


def adaptive_iteration_bound(confidence: float, inlier_ratio: float) -> float:
    """Standard RANSAC draw bound ceil(log(1-c) / log(1-w^5)); inf if w = 0."""
    if inlier_ratio <= 0.0:
        return math.inf
    p_good = min(inlier_ratio, 1.0) ** 5
    if p_good >= 1.0:
        return 0.0
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p_good))


def ransac_essential(
    matches: MatchSet, cam: CameraModel, cfg: RansacConfig = RansacConfig()
) -> RansacResult:
    """Five-point RANSAC over tentative matches.

    Each iteration draws its sample from an RNG stream seeded by
    (cfg.seed, iteration), so results do not depend on scheduling. Ties on
    inlier count are broken by lower total inlier residual, then by the
    earlier iteration.
    """
    n = len(matches)
    if n < 5:
        raise InsufficientDataError(f"need at least 5 matches, have {n}")
    pts_p, pts_q = matches.points()
    bp = pixels_to_bearings(pts_p, cam)
    bq = pixels_to_bearings(pts_q, cam)

    best_model: EssentialMatrix | None = None
    best_count = -1
    best_resid = math.inf
    iterations = 0
    for i in range(cfg.max_iters):
        iterations = i + 1
        rng = np.random.default_rng([cfg.seed, i])
        idx = rng.choice(n, size=5, replace=False)
        try:
            candidates = five_point_essential(bp[idx], bq[idx])
        except DegenerateSampleError:
            candidates = []
        for cand in candidates:
            r = epipolar_residuals(cand, bp, bq)
            inl = r < cfg.threshold
            count = int(inl.sum())
            resid = float(r[inl].sum())
            if count > best_count or (count == best_count and resid < best_resid):
                best_model, best_count, best_resid = cand, count, resid
        if best_count > 0 and iterations >= adaptive_iteration_bound(
            cfg.confidence, best_count / n
        ):
            break

    if best_model is None or best_count <= 0:
        raise NoModelError("no essential matrix found within the iteration budget")
    flags = epipolar_residuals(best_model, bp, bq) < cfg.threshold
    return RansacResult(
        model=best_model,
        inlier_flags=flags,
        iterations_run=iterations,
        best_inlier_count=int(flags.sum()),
    )
