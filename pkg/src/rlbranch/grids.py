"""Lifetime grids with the model ingredients sampled at the nodes."""
from __future__ import annotations

import numpy as np

from .quadrature import REFINE


class NodeGrid:
    """Nodes ``x_j = j * step`` on ``[0, x_max]``.

    Rate and offspring moments at ``x = 0`` are right limits, since every
    integral that touches that node approaches it from inside ``(0, x]``.
    """

    def __init__(self, spec, step: float, n: int):
        self.step = step
        self.n = n
        self.x = step * np.arange(n + 1)
        self.alpha = spec.alpha.raw(self.x)
        self.gp1 = spec.offspring.gp1(self.x)
        self.gpp1 = spec.offspring.gpp1(self.x)
        self.kappa = self.alpha * self.gp1
        self.kappa2 = self.alpha * self.gpp1
        self.dens = spec.lifetime.grid_pdf(self.x)
        self._spec = spec

    def shifted_density(self, n_extra: int) -> np.ndarray:
        """Lifetime density on the nodes extended by ``n_extra`` steps past x_max."""
        x = self.step * np.arange(self.n + n_extra + 1)
        return self._spec.lifetime.grid_pdf(x)


class Discretization:
    """All grids derived from one spec.

    ``node`` has the renewal step h; ``fine`` and ``coarse`` (steps h/REFINE
    and 2h/REFINE) feed the Richardson-extrapolated scalar functionals.
    """

    def __init__(self, spec):
        num = spec.numerics
        self.h = num.h
        self.nt = num.n_steps
        self.t = self.h * np.arange(self.nt + 1)
        self.x_max = spec.x_max
        self.nx = int(round(self.x_max / self.h))
        self.node = NodeGrid(spec, self.h, self.nx)
        self.fine = NodeGrid(spec, self.h / REFINE, self.nx * REFINE)
        self.coarse = NodeGrid(spec, 2 * self.h / REFINE, self.nx * REFINE // 2)
