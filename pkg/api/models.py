from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, RootModel, field_validator, model_validator

from reporting.table_writer import parse_complex
from services.dirac import DeltaSpec
from services.recurrence import RecurrenceFamily
from services.sobolev import lebesgue_moments

Scalar = Union[float, str]


class MatrixModel(RootModel[List[List[Scalar]]]):
    """
    Square matrix given as rows of numbers or 're+imj' strings.
    """

    @field_validator('root')
    @classmethod
    def check_square(cls, rows):
        if not rows or any(len(row) != len(rows) for row in rows):
            raise ValueError(f"Matrix must be square and non-empty, got row lengths {[len(r) for r in rows]}")
        for row in rows:
            for entry in row:
                parse_complex(entry)
        return rows

    @property
    def dim(self):
        return len(self.root)

    def to_array(self):
        return np.array([[parse_complex(entry) for entry in row] for row in self.root], dtype=complex)


class TripleModel(BaseModel):
    A: MatrixModel
    B: MatrixModel
    C: MatrixModel

    def arrays(self):
        return self.A.to_array(), self.B.to_array(), self.C.to_array()


class FamilySpec(BaseModel):
    """
    Recurrence family: constant coefficients, a Nevai sequence X + dX/(m+1)^power,
    or an explicit table of triples.
    """
    kind: Literal['constant', 'sequence', 'tabulated'] = 'constant'
    name: str = 'family'
    A: Optional[MatrixModel] = None
    B: Optional[MatrixModel] = None
    C: Optional[MatrixModel] = None
    dA: Optional[MatrixModel] = None
    dB: Optional[MatrixModel] = None
    dC: Optional[MatrixModel] = None
    power: float = Field(2.0, gt=1.0)
    table: Optional[List[TripleModel]] = None
    limits: Optional[TripleModel] = None
    G0: Optional[MatrixModel] = None

    @model_validator(mode='after')
    def check_shapes(self):
        if self.kind == 'tabulated':
            if not self.table:
                raise ValueError("A tabulated family needs a non-empty 'table'")
            matrices = [m for t in self.table for m in (t.A, t.B, t.C)]
        else:
            if self.A is None or self.B is None or self.C is None:
                raise ValueError(f"A {self.kind} family needs A, B and C")
            matrices = [self.A, self.B, self.C] + [m for m in (self.dA, self.dB, self.dC) if m is not None]
        if self.G0 is not None:
            matrices.append(self.G0)
        dims = {m.dim for m in matrices}
        if len(dims) != 1:
            raise ValueError(f"All family matrices must share one dimension, got {sorted(dims)}")
        return self

    @property
    def dim(self):
        return self.table[0].A.dim if self.kind == 'tabulated' else self.A.dim

    def build(self):
        """
        Returns:
            The validated RecurrenceFamily.

        Raises:
            FamilyValidationError: Naming the failing invariant and index m.
        """
        G0 = None if self.G0 is None else self.G0.to_array()
        if self.kind == 'constant':
            family = RecurrenceFamily.constant_family(self.A.to_array(), self.B.to_array(), self.C.to_array(),
                                                      G0=G0, name=self.name)
        elif self.kind == 'sequence':
            deltas = [None if d is None else d.to_array() for d in (self.dA, self.dB, self.dC)]
            family = RecurrenceFamily.sequence_family(self.A.to_array(), self.B.to_array(), self.C.to_array(),
                                                      *deltas, power=self.power, G0=G0, name=self.name)
        else:
            limits = None if self.limits is None else self.limits.arrays()
            family = RecurrenceFamily.tabulated_family([t.arrays() for t in self.table], limits=limits,
                                                       G0=G0, name=self.name)
        return family.validate()


class DeltaPointModel(BaseModel):
    c: Scalar = 0.0
    M: int = Field(0, ge=0)


class PerturbationSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    points: List[DeltaPointModel] = Field(min_length=1)
    lam: MatrixModel = Field(alias='lambda')

    @property
    def dim(self):
        return sum(point.M + 1 for point in self.points)

    def delta(self):
        return DeltaSpec(tuple((parse_complex(p.c), p.M) for p in self.points))


class ExperimentSpec(BaseModel):
    id: str = Field(pattern=r'^[A-Za-z0-9_.-]+$')
    kind: Literal['ratio', 'derivative_ratio', 'inverse_decay', 'xi_limit', 'relative']
    z: Optional[Scalar] = None
    k: int = Field(1, ge=0, le=2)
    m_max: Optional[int] = Field(None, ge=1)
    gate: Optional[float] = Field(None, gt=0)
    target: Literal['markov', 'ratio_limit'] = 'markov'

    @field_validator('z')
    @classmethod
    def check_z(cls, z):
        if z is not None:
            parse_complex(z)
        return z

    def point(self):
        return None if self.z is None else parse_complex(self.z)


class SobolevSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(1.0, alias='lambda')
    n_max: int = Field(9, ge=2)
    moments: Optional[List[float]] = None

    def measure_moments(self, n_max=None):
        n_max = self.n_max if n_max is None else n_max
        return self.moments if self.moments is not None else lebesgue_moments(2 * (n_max + 3))


class RunConfig(BaseModel):
    """
    Experiment configuration read from JSON.
    """
    family: Optional[FamilySpec] = None
    perturbation: Optional[PerturbationSpec] = None
    experiments: List[ExperimentSpec] = []
    sobolev: Optional[SobolevSpec] = None
    markov_grid: List[Scalar] = []
    closed_forms: bool = False
    identity_m_max: int = Field(15, ge=0)
    identity_points: int = Field(10, ge=1)
    identity_radius: float = Field(5.0, gt=0)
    pairing_max: int = Field(8, ge=0)
    perturb_m_max: int = Field(6, ge=1)
    seed: Optional[int] = None
    format: Optional[Literal['csv', 'json']] = None

    @model_validator(mode='after')
    def check_perturbation(self):
        if self.perturbation is not None:
            if self.family is None:
                raise ValueError("A perturbation needs a 'family' section")
            if self.perturbation.dim != self.family.dim:
                raise ValueError(f"Perturbation functionals sum (M+1) = {self.perturbation.dim} "
                                 f"but the family dimension N = {self.family.dim}")
            if self.perturbation.lam.dim != self.family.dim:
                raise ValueError(f"Lambda must be {self.family.dim} x {self.family.dim}")
        ids = [e.id for e in self.experiments]
        if len(ids) != len(set(ids)):
            raise ValueError(f"Experiment ids must be unique, got {ids}")
        return self

    @classmethod
    def from_file(cls, path):
        return cls.model_validate_json(Path(path).read_text())

    def grid(self):
        return [parse_complex(z) for z in self.markov_grid]
