"""Camera model and 3D->2D Gaussian projection.

Covariances are built as R(q) diag(s^2) R(q)^T and pushed through the
pinhole projection with its first-order Jacobian, yielding per-splat 2x2
screen covariances.  All of it is expressed as a graph of diffcore
primitives, so gradients w.r.t. means, quaternions and scales come from
the tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffcore import ContractViolation, Tensor, as_tensor
from .diffcore.ops import (
    add, add_const, concat, div, gather_rows, matmul, mul, narrow, neg,
    reshape, scale, square, sub, sum_,
)

# Low-pass regularization added to the screen covariance diagonal (px^2);
# keeps sub-pixel splats from degenerating and stabilizes gradients.
LAMBDA_LOWPASS = 0.3


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    w2c: np.ndarray  # 4x4 rigid world-to-camera transform
    z_near: float = 0.05

    def __post_init__(self):
        self.w2c = np.asarray(self.w2c, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ContractViolation("focal lengths must be positive")
        if self.z_near <= 0:
            raise ContractViolation("z_near must be positive")
        r = self.w2c[:3, :3]
        if np.linalg.norm(r.T @ r - np.eye(3)) >= 1e-6:
            raise ContractViolation("world-to-camera rotation is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.w2c[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.w2c[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "w2c": [float(v) for v in self.w2c.reshape(-1)],
            "z_near": self.z_near,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=int(d["width"]), height=int(d["height"]),
                   w2c=np.asarray(d["w2c"], dtype=np.float64).reshape(4, 4),
                   z_near=d.get("z_near", 0.05))


def save_cameras(path, cameras: list[CameraModel]) -> None:
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=1)


def load_cameras(path) -> list[CameraModel]:
    with open(path) as f:
        return [CameraModel.from_dict(d) for d in json.load(f)]


def look_at_w2c(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera transform for a camera at `eye` looking at `target`.

    Camera convention: x right, y down, z forward (points into the scene).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    x = np.cross(fwd, upv)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        x = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(fwd, x)
    r = np.stack([x, y, fwd], axis=0)
    if np.linalg.det(r) < 0:
        y = -y
        r = np.stack([x, y, fwd], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ eye
    return w2c


def _cov_components(q: Tensor, s: Tensor) -> dict[str, Tensor]:
    """Unique entries of R(q) diag(s^2) R(q)^T as (N,1) tensors.

    Requires unit quaternions; a near-zero quaternion is a caller bug.
    """
    if np.any(np.linalg.norm(q.data, axis=1) < 1e-8):
        raise ContractViolation("zero quaternion; normalize upstream")
    w = narrow(q, 1, 0, 1)
    x = narrow(q, 1, 1, 1)
    y = narrow(q, 1, 2, 1)
    z = narrow(q, 1, 3, 1)

    def two(a):
        return scale(a, 2.0)

    # Rotation matrix entries (unit-quaternion polynomial form).
    r00 = add_const(scale(add(square(y), square(z)), -2.0), 1.0)
    r01 = two(sub(mul(x, y), mul(w, z)))
    r02 = two(add(mul(x, z), mul(w, y)))
    r10 = two(add(mul(x, y), mul(w, z)))
    r11 = add_const(scale(add(square(x), square(z)), -2.0), 1.0)
    r12 = two(sub(mul(y, z), mul(w, x)))
    r20 = two(sub(mul(x, z), mul(w, y)))
    r21 = two(add(mul(y, z), mul(w, x)))
    r22 = add_const(scale(add(square(x), square(y)), -2.0), 1.0)
    rows = [[r00, r01, r02], [r10, r11, r12], [r20, r21, r22]]

    s2 = [square(narrow(s, 1, k, 1)) for k in range(3)]

    def entry(a, b):
        terms = [mul(mul(rows[a][k], s2[k]), rows[b][k]) for k in range(3)]
        return add(add(terms[0], terms[1]), terms[2])

    return {
        "xx": entry(0, 0), "xy": entry(0, 1), "xz": entry(0, 2),
        "yy": entry(1, 1), "yz": entry(1, 2), "zz": entry(2, 2),
    }


def build_covariance(q, s) -> Tensor:
    """World-space 3x3 covariances (N,3,3) from unit quaternions and scales.

    The output is exactly symmetric: both off-diagonal slots reuse the same
    graph node.  Eigenvalues equal the squared scales.
    """
    q, s = as_tensor(q), as_tensor(s)
    c = _cov_components(q, s)
    flat = concat([c["xx"], c["xy"], c["xz"],
                   c["xy"], c["yy"], c["yz"],
                   c["xz"], c["yz"], c["zz"]], axis=1)
    return reshape(flat, (q.data.shape[0], 3, 3))


@dataclass
class ProjectedSplats:
    """Screen-space splats surviving the near-plane and extent culls."""
    mean2d: Tensor      # (K, 2) pixels
    conic: Tensor       # (K, 3) inverse covariance (a, b, c) for [[a,b],[b,c]]
    depth: Tensor       # (K, 1) camera-space z
    radius: np.ndarray  # (K,) 3-sigma screen extent, pixels
    keep: np.ndarray    # (K,) indices into the input splat list
    n_input: int = 0
    cov2d: Tensor | None = None  # (K, 3) screen covariance (a, b, c), post low-pass


def project_gaussians(means, q, s, cam: CameraModel,
                      lambda_lowpass: float = LAMBDA_LOWPASS) -> ProjectedSplats:
    """Project 3D Gaussians to screen space under `cam`.

    Means map through the pinhole model; covariances through the projection
    Jacobian composed with the camera rotation (upper-left 2x2), plus a
    low-pass floor on the diagonal.  Splats in front of the near plane or
    whose 3-sigma extent misses the image are culled.
    """
    means, q, s = as_tensor(means), as_tensor(q), as_tensor(s)
    n = means.data.shape[0]
    rot = cam.rotation
    rot_t = Tensor(rot.T, dtype=means.dtype)
    t = Tensor(cam.translation, dtype=means.dtype)

    p_cam = add(matmul(means, rot_t), broadcast_row(t, n))
    px = narrow(p_cam, 1, 0, 1)
    py = narrow(p_cam, 1, 1, 1)
    pz = narrow(p_cam, 1, 2, 1)

    # Near-plane and extent culling use forward values only.
    keep_near = p_cam.data[:, 2] >= cam.z_near
    inv_z = div(Tensor(np.ones((n, 1)), dtype=means.dtype), pz)
    u = add_const(mul(scale(px, cam.fx), inv_z), cam.cx)
    v = add_const(mul(scale(py, cam.fy), inv_z), cam.cy)
    mean2d = concat([u, v], axis=1)

    cov = _cov_components(q, s)
    # Rows of M = J @ R for the 2x3 projection Jacobian J at each splat.
    inv_z2 = square(inv_z)
    jx = [scale(inv_z, cam.fx), Tensor(np.zeros((n, 1)), dtype=means.dtype),
          scale(mul(px, inv_z2), -cam.fx)]
    jy = [Tensor(np.zeros((n, 1)), dtype=means.dtype), scale(inv_z, cam.fy),
          scale(mul(py, inv_z2), -cam.fy)]

    def j_dot_rot(jrow, col):
        terms = [scale(jrow[i], rot[i, col]) for i in range(3)]
        return add(add(terms[0], terms[1]), terms[2])

    m0 = [j_dot_rot(jx, c) for c in range(3)]
    m1 = [j_dot_rot(jy, c) for c in range(3)]

    sym = [["xx", "xy", "xz"], ["xy", "yy", "yz"], ["xz", "yz", "zz"]]

    def quad(ma, mb):
        acc = None
        for i in range(3):
            for jj in range(3):
                term = mul(mul(ma[i], cov[sym[i][jj]]), mb[jj])
                acc = term if acc is None else add(acc, term)
        return acc

    a = add_const(quad(m0, m0), lambda_lowpass)
    b = quad(m0, m1)
    c = add_const(quad(m1, m1), lambda_lowpass)

    det = sub(mul(a, c), square(b))
    conic = concat([div(c, det), neg(div(b, det)), div(a, det)], axis=1)

    # 3-sigma extent from the larger eigenvalue of [[a,b],[b,c]].
    av, bv, cv = a.data[:, 0], b.data[:, 0], c.data[:, 0]
    lam_max = 0.5 * (av + cv) + np.sqrt(np.maximum(0.25 * (av - cv) ** 2 + bv ** 2, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))

    uv = mean2d.data
    keep_extent = (
        (uv[:, 0] + radius > 0.0) & (uv[:, 0] - radius < cam.width)
        & (uv[:, 1] + radius > 0.0) & (uv[:, 1] - radius < cam.height)
    )
    keep = np.flatnonzero(keep_near & keep_extent)

    cov2d = concat([a, b, c], axis=1)
    return ProjectedSplats(
        mean2d=gather_rows(mean2d, keep),
        conic=gather_rows(conic, keep),
        depth=gather_rows(pz, keep),
        radius=radius[keep],
        keep=keep,
        n_input=n,
        cov2d=gather_rows(cov2d, keep),
    )


def broadcast_row(t: Tensor, n: int) -> Tensor:
    """Tile a (C,) tensor into (n, C) with summing backward."""
    from .diffcore.ops import broadcast_to
    return broadcast_to(reshape(t, (1, t.data.shape[0])), (n, t.data.shape[0]))


def unproject(depth: np.ndarray, rgb: np.ndarray, cam: CameraModel):
    """Lift a depth map back to a world-space colored point cloud.

    One point per pixel with depth > 0, sampled at pixel centers
    (col + 0.5, row + 0.5); returns (coords (P,3), colors (P,3)).
    """
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.nonzero(depth > 0)
    d = depth[rows, cols]
    u = cols + 0.5
    v = rows + 0.5
    x = (u - cam.cx) / cam.fx * d
    y = (v - cam.cy) / cam.fy * d
    p_cam = np.stack([x, y, d], axis=1)
    coords = (p_cam - cam.translation) @ cam.rotation
    colors = np.asarray(rgb, dtype=np.float64)[rows, cols]
    return coords, colors
