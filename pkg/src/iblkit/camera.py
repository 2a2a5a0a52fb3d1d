"""Pinhole cameras: camera-to-world pose, focal length in pixels, image size.

The camera looks down its local -z axis with +y up; pixel (row, col) centres
map to ((col + 0.5 - W/2) / f, -(row + 0.5 - H/2) / f, -1).
"""

from dataclasses import dataclass

import numpy as np

from .field import Rays


class CameraError(ValueError):
    pass


@dataclass
class Camera:
    c2w: np.ndarray
    focal: float
    width: int
    height: int
    near: float = 0.05
    far: float = 4.0

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=float).reshape(4, 4)
        self.focal = float(self.focal)
        self.width, self.height = int(self.width), int(self.height)
        if not self.near < self.far:
            raise CameraError("near must be < far")
        rot = self.c2w[:3, :3]
        if np.abs(rot.T @ rot - np.eye(3)).max() >= 1e-4:
            raise CameraError("non-orthonormal camera rotation")

    @property
    def position(self):
        return self.c2w[:3, 3].copy()

    @property
    def pixels(self):
        return self.width * self.height

    def directions(self):
        """Unit world-space ray directions, (H * W, 3) in row-major order."""
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        local = np.stack([
            (cols + 0.5 - 0.5 * self.width) / self.focal,
            -(rows + 0.5 - 0.5 * self.height) / self.focal,
            -np.ones_like(rows, dtype=float),
        ], axis=-1).reshape(-1, 3)
        world = local @ self.c2w[:3, :3].T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def rays(self):
        d = self.directions()
        o = np.broadcast_to(self.position, d.shape)
        return Rays(o, d, self.near, self.far)


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """Camera-to-world matrix placing the camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=float)
    back = eye - np.asarray(target, dtype=float)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=float), back)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross([0.0, 0.0, 1.0], back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, true_up, back, eye
    return m


def focal_from_fov(width, fov_deg):
    return 0.5 * width / np.tan(np.radians(fov_deg) / 2)
