"""Container for discretely observed functional covariates and responses."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from fnncc.errors import SchemaError


@dataclass
class ProfileSet:
    """``n`` samples of ``P`` covariates observed on a common grid.

    Attributes
    ----------
    raw : array, shape (n, P, C)
    grid : array, shape (C,)
    y : array, shape (n,), optional
        Scalar response.
    z : array, shape (n, J), optional
        Scalar covariates.
    ids : array of str, shape (n,)
    covariate_ids : tuple of str, length P
    """

    raw: np.ndarray
    grid: np.ndarray
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    covariate_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)
        if self.raw.ndim == 2:
            self.raw = self.raw[:, None, :]
        self.grid = np.asarray(self.grid, dtype=float)
        n, P, C = self.raw.shape
        if C != self.grid.size:
            raise SchemaError(f"profiles have {C} grid points but the grid has {self.grid.size}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float).reshape(-1)
            if self.y.size != n:
                raise SchemaError("response length does not match number of profiles")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float).reshape(n, -1)
        if self.ids is None:
            self.ids = np.array([f"s{i}" for i in range(n)])
        else:
            self.ids = np.asarray(self.ids).astype(str)
        if not self.covariate_ids:
            self.covariate_ids = tuple(f"X{p + 1}" for p in range(P))
        if len(self.covariate_ids) != P:
            raise SchemaError("covariate_ids length does not match number of covariates")

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.raw.shape[1]

    def subset(self, index) -> "ProfileSet":
        index = np.asarray(index)
        return replace(
            self,
            raw=self.raw[index],
            y=None if self.y is None else self.y[index],
            z=None if self.z is None else self.z[index],
            ids=self.ids[index],
            meta=dict(self.meta),
        )
