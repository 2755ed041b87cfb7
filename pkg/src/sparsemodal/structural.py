"""Parameterized structural model: K(theta) = K0 + sum_j theta_j * Kj.

A :class:`StructuralBasis` holds the known mass matrix, the known stiffness
part ``K0`` and one nominal substructure stiffness matrix per scaling
parameter. A :class:`ShearBuildingSpec` generates such a basis for a 3-D
shear building with rigid floors (three DOFs per floor: x translation,
y translation, rotation about the vertical axis) where every story face is
one substructure.

Face convention
---------------
Faces are named by the direction of their outward normal. Braces in a face
resist story shear parallel to the face plane and couple to floor rotation
through the face's lever arm:

* ``+x`` / ``-x`` faces act on y translation with rotation lever ``+a`` / ``-a``
  (``a`` is the plan half-width along x),
* ``+y`` / ``-y`` faces act on x translation with rotation lever ``-b`` / ``+b``
  (``b`` is the plan half-width along y).

Substructure labels are ``"<story>,<face>"`` (story is 1-based), ordered
story-major within face, faces ordered ``+x, +y, -x, -y``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import FormatError

FACE_ORDER = ("+x", "+y", "-x", "-y")

_SYM_TOL = 1e-10
_PSD_TOL = 1e-9


def _check_symmetric(name: str, m: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > _SYM_TOL * scale:
        raise ValueError(f"{name} must be symmetric")


def _is_spd(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class StructuralBasis:
    """Mass matrix, known stiffness part and substructure stiffness matrices.

    Immutable after construction; operations on it are pure functions, so a
    basis can be shared freely across concurrent solver runs.
    """

    mass: np.ndarray
    k0: np.ndarray
    k_sub: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        k0 = np.asarray(self.k0, dtype=float)
        k_sub = tuple(np.asarray(k, dtype=float) for k in self.k_sub)
        n = mass.shape[0]
        if mass.shape != (n, n) or k0.shape != (n, n):
            raise ValueError("mass and k0 must be square matrices of equal size")
        _check_symmetric("mass", mass)
        _check_symmetric("k0", k0)
        if not _is_spd(mass):
            raise ValueError("mass matrix must be positive definite")
        if len(k_sub) == 0:
            raise ValueError("at least one substructure matrix is required")
        scale = max(float(np.abs(k0).max()), max(float(np.abs(k).max()) for k in k_sub), 1.0)
        for j, k in enumerate(k_sub):
            if k.shape != (n, n):
                raise ValueError(f"k_sub[{j}] has shape {k.shape}, expected {(n, n)}")
            _check_symmetric(f"k_sub[{j}]", k)
            if np.linalg.eigvalsh(k).min() < -_PSD_TOL * scale:
                raise ValueError(f"k_sub[{j}] must be positive semidefinite")
        if not _is_spd(k0 + sum(k_sub)):
            raise ValueError("nominal stiffness K0 + sum(Kj) must be positive definite")
        labels = tuple(str(s) for s in self.labels)
        if len(labels) != len(k_sub):
            raise ValueError("labels length must match number of substructures")
        if len(set(labels)) != len(labels):
            raise ValueError("substructure labels must be unique")
        for m in (mass, k0) + k_sub:
            m.setflags(write=False)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "k0", k0)
        object.__setattr__(self, "k_sub", k_sub)
        object.__setattr__(self, "labels", labels)

    @property
    def n_dof(self) -> int:
        return self.mass.shape[0]

    @property
    def n_sub(self) -> int:
        return len(self.k_sub)

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown substructure label {label!r}") from None


def assemble_stiffness(basis: StructuralBasis, theta: np.ndarray) -> np.ndarray:
    """Assemble K(theta) = K0 + sum_j theta_j * Kj.

    Linear in ``theta``; the result is symmetrized to machine precision.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.n_sub,):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({basis.n_sub},)"
        )
    k = basis.k0.copy()
    for tj, kj in zip(theta, basis.k_sub):
        k += tj * kj
    return 0.5 * (k + k.T)


@dataclass(frozen=True)
class ShearBuildingSpec:
    """Defines a rigid-floor shear building with one substructure per face
    and story.

    Parameters
    ----------
    n_stories : int
        Number of stories; the model has ``3 * n_stories`` DOFs and
        ``4 * n_stories`` substructures.
    face_stiffness : dict
        Maps each face in ``{"+x", "-x", "+y", "-y"}`` to the per-story
        nominal lateral stiffness (scalar, or one value per story).
    floor_mass : array-like
        Translational mass per floor (scalar or one per floor).
    rotational_inertia : array-like
        Rotational inertia per floor about the vertical axis through the
        floor center (scalar or one per floor).
    plan_half_widths : (float, float)
        Plan half-widths ``(a, b)`` along x and y; they set the lever arms
        of the torsional coupling.
    """

    n_stories: int
    face_stiffness: dict = field(default_factory=dict)
    floor_mass: object = 1.0
    rotational_inertia: object = 1.0
    plan_half_widths: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.n_stories < 1:
            raise ValueError("n_stories must be a positive integer")
        missing = [f for f in FACE_ORDER if f not in self.face_stiffness]
        if missing:
            raise ValueError(f"face_stiffness missing faces: {missing}")
        face_stiffness = {
            f: self._per_story(self.face_stiffness[f], f"face_stiffness[{f!r}]")
            for f in FACE_ORDER
        }
        object.__setattr__(self, "face_stiffness", face_stiffness)
        object.__setattr__(
            self, "floor_mass", self._per_story(self.floor_mass, "floor_mass")
        )
        object.__setattr__(
            self,
            "rotational_inertia",
            self._per_story(self.rotational_inertia, "rotational_inertia"),
        )
        a, b = self.plan_half_widths
        if a <= 0 or b <= 0:
            raise ValueError("plan_half_widths must be strictly positive")
        object.__setattr__(self, "plan_half_widths", (float(a), float(b)))

    def _per_story(self, value, name: str) -> tuple[float, ...]:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            arr = np.full(self.n_stories, float(arr[0]))
        if arr.shape != (self.n_stories,):
            raise ValueError(f"{name} must be a scalar or length-{self.n_stories}")
        if np.any(arr <= 0):
            raise ValueError(f"{name} entries must be strictly positive")
        return tuple(float(v) for v in arr)


# (translation DOF offset within a floor, lever-arm sign picking a or b)
_FACE_ACTION = {
    "+x": (1, +1),  # y translation, lever +a
    "-x": (1, -1),  # y translation, lever -a
    "+y": (0, -1),  # x translation, lever -b
    "-y": (0, +1),  # x translation, lever +b
}


def build_shear_building(spec: ShearBuildingSpec) -> StructuralBasis:
    """Assemble the StructuralBasis for a shear-building spec.

    Each substructure matrix is the rank-one story-shear contribution of one
    face, so it is symmetric positive semidefinite by construction; with all
    scaling parameters at 1 the full frame stiffness is recovered. K0 is
    zero: every stiffness contribution is considered vulnerable. The mass
    matrix is block diagonal per floor: diag(m, m, J).
    """
    ns = spec.n_stories
    n_dof = 3 * ns
    a, b = spec.plan_half_widths

    mass = np.zeros((n_dof, n_dof))
    for fl in range(ns):
        mass[3 * fl, 3 * fl] = spec.floor_mass[fl]
        mass[3 * fl + 1, 3 * fl + 1] = spec.floor_mass[fl]
        mass[3 * fl + 2, 3 * fl + 2] = spec.rotational_inertia[fl]

    k_sub = []
    labels = []
    for face in FACE_ORDER:
        t_off, lever_sign = _FACE_ACTION[face]
        lever = lever_sign * (a if face in ("+x", "-x") else b)
        for story in range(1, ns + 1):
            w = np.zeros(n_dof)
            fl = story - 1  # upper floor of this story
            w[3 * fl + t_off] = 1.0
            w[3 * fl + 2] = lever
            if story > 1:
                below = story - 2
                w[3 * below + t_off] = -1.0
                w[3 * below + 2] = -lever
            k = spec.face_stiffness[face][story - 1] * np.outer(w, w)
            k_sub.append(k)
            labels.append(f"{story},{face}")

    return StructuralBasis(
        mass=mass, k0=np.zeros((n_dof, n_dof)), k_sub=tuple(k_sub), labels=tuple(labels)
    )


def solve_modes(
    basis: StructuralBasis, theta: np.ndarray, n_modes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Lowest generalized eigenpairs of (K(theta), M).

    Returns ``(omega_sq, shapes)`` with ascending squared frequencies and
    shapes of shape (n_modes, n_dof), each unit Euclidean norm with the
    largest-magnitude component positive.
    """
    if not 1 <= n_modes <= basis.n_dof:
        raise ValueError(f"n_modes must be in [1, {basis.n_dof}]")
    k = assemble_stiffness(basis, theta)
    vals, vecs = scipy.linalg.eigh(k, basis.mass)
    if vals[0] <= 0:
        raise ValueError(
            f"K(theta) is not positive definite (smallest eigenvalue {vals[0]:.3e})"
        )
    omega_sq = vals[:n_modes].copy()
    shapes = np.empty((n_modes, basis.n_dof))
    for i in range(n_modes):
        v = vecs[:, i]
        v = v / np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        shapes[i] = v
    return omega_sq, shapes


# ---------------------------------------------------------------------------
# Model file format (JSON)
#
# Either an explicit form:
#   {"mass": [[..]], "k0": [[..]], "k_sub": [[[..]], ...], "labels": [".."]}
# or a generator form:
#   {"shear_building": {"n_stories": .., "face_stiffness": {"+x": [..], ..},
#                       "floor_mass": .., "rotational_inertia": ..,
#                       "plan_half_widths": [a, b]}}
# Numbers are IEEE-754 doubles serialized as JSON numbers.
# ---------------------------------------------------------------------------


def _require(doc: dict, key: str, where: str = ""):
    if key not in doc:
        raise FormatError(where + key, "required field is missing")
    return doc[key]


def _as_matrix(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise FormatError(path, "must be a numeric matrix") from None
    if arr.ndim != 2:
        raise FormatError(path, f"must be 2-dimensional, got {arr.ndim} dims")
    if not np.all(np.isfinite(arr)):
        raise FormatError(path, "contains non-finite entries")
    return arr


def model_to_dict(basis: StructuralBasis) -> dict:
    return {
        "mass": basis.mass.tolist(),
        "k0": basis.k0.tolist(),
        "k_sub": [k.tolist() for k in basis.k_sub],
        "labels": list(basis.labels),
    }


def model_from_dict(doc: dict) -> StructuralBasis:
    if not isinstance(doc, dict):
        raise FormatError("<root>", "model document must be a JSON object")
    if "shear_building" in doc:
        sb = doc["shear_building"]
        if not isinstance(sb, dict):
            raise FormatError("shear_building", "must be a JSON object")
        try:
            spec = ShearBuildingSpec(
                n_stories=int(_require(sb, "n_stories", "shear_building.")),
                face_stiffness=_require(sb, "face_stiffness", "shear_building."),
                floor_mass=_require(sb, "floor_mass", "shear_building."),
                rotational_inertia=_require(sb, "rotational_inertia", "shear_building."),
                plan_half_widths=tuple(_require(sb, "plan_half_widths", "shear_building.")),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError("shear_building", str(exc)) from None
        return build_shear_building(spec)

    mass = _as_matrix(_require(doc, "mass"), "mass")
    k0 = _as_matrix(_require(doc, "k0"), "k0")
    raw_sub = _require(doc, "k_sub")
    if not isinstance(raw_sub, (list, tuple)) or len(raw_sub) == 0:
        raise FormatError("k_sub", "must be a non-empty list of matrices")
    k_sub = tuple(_as_matrix(k, f"k_sub[{j}]") for j, k in enumerate(raw_sub))
    labels = doc.get("labels")
    if labels is None:
        labels = [str(j + 1) for j in range(len(k_sub))]
    try:
        return StructuralBasis(mass=mass, k0=k0, k_sub=k_sub, labels=tuple(labels))
    except ValueError as exc:
        raise FormatError("<model>", str(exc)) from None


def load_model(path) -> StructuralBasis:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("<json>", f"malformed JSON: {exc}") from None
    return model_from_dict(doc)


def save_model(basis: StructuralBasis, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(basis), fh, indent=1)
        fh.write("\n")
