"""Identified modal datasets and the observation selection structures.

A :class:`ModalDataset` holds, for each of ``n_segments`` independent data
segments, the identified squared natural frequencies (rad^2/s^2) and the
identified mode-shape components at the observed DOFs.

Conventions (applied on construction and on load):

* every (segment, mode) shape vector is unit Euclidean norm with its
  largest-magnitude component positive, so segments and any paired system
  mode shapes share scale and sign;
* modes within a segment are ordered by ascending identified frequency.

At least three segments are required: the frequency-precision update
divides by ``n_segments - 2``, so fewer segments make the hyper-parameter
estimates undefined or non-positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MIN_SEGMENTS = 3


def normalize_shape(vec: np.ndarray) -> np.ndarray:
    """Unit-norm a shape vector and fix its sign (largest |entry| positive).

    Bitwise idempotent: a vector already unit-norm (within rounding) is not
    rescaled, so normalized data round-trips exactly through files.
    """
    vec = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValueError("mode-shape vector has zero norm")
    if abs(norm - 1.0) > 1e-12:
        vec = vec / norm
    k = int(np.argmax(np.abs(vec)))
    if vec[k] < 0:
        vec = -vec
    return vec


@dataclass(frozen=True)
class ModalDataset:
    """Identified modal data from ``n_segments`` independent segments.

    Attributes
    ----------
    observed_dofs : tuple of int
        Strictly increasing model-DOF indices of the sensors.
    freq_sq : ndarray, shape (n_segments, n_modes)
        Identified squared natural frequencies, rad^2/s^2, all positive.
    mode_shapes : ndarray, shape (n_segments, n_modes, n_observed)
        Identified mode-shape components at the observed DOFs.
    """

    observed_dofs: tuple[int, ...]
    freq_sq: np.ndarray
    mode_shapes: np.ndarray

    def __post_init__(self):
        dofs = tuple(int(d) for d in self.observed_dofs)
        if len(dofs) == 0:
            raise ValueError("observed_dofs must be non-empty")
        if any(d < 0 for d in dofs):
            raise ValueError("observed_dofs must be nonnegative")
        if any(b <= a for a, b in zip(dofs, dofs[1:])):
            raise ValueError("observed_dofs must be strictly increasing")
        freq_sq = np.array(self.freq_sq, dtype=float)
        shapes = np.array(self.mode_shapes, dtype=float)
        if freq_sq.ndim != 2:
            raise ValueError("freq_sq must be 2-dimensional (segments x modes)")
        ns, nm = freq_sq.shape
        if ns < MIN_SEGMENTS:
            raise ValueError(
                f"at least {MIN_SEGMENTS} data segments are required for the "
                f"frequency-precision estimate to be positive and finite; got {ns}"
            )
        if nm < 1:
            raise ValueError("at least one mode is required")
        if not np.all(np.isfinite(freq_sq)) or np.any(freq_sq <= 0):
            raise ValueError("freq_sq entries must be finite and strictly positive")
        if shapes.shape != (ns, nm, len(dofs)):
            raise ValueError(
                f"mode_shapes has shape {shapes.shape}, expected "
                f"{(ns, nm, len(dofs))}"
            )
        if not np.all(np.isfinite(shapes)):
            raise ValueError("mode_shapes entries must be finite")
        # Enforce the ordering and normalization conventions.
        order = np.argsort(freq_sq, axis=1, kind="stable")
        freq_sq = np.take_along_axis(freq_sq, order, axis=1)
        shapes = np.take_along_axis(shapes, order[:, :, None], axis=1)
        for r in range(ns):
            for i in range(nm):
                shapes[r, i] = normalize_shape(shapes[r, i])
        freq_sq.setflags(write=False)
        shapes.setflags(write=False)
        object.__setattr__(self, "observed_dofs", dofs)
        object.__setattr__(self, "freq_sq", freq_sq)
        object.__setattr__(self, "mode_shapes", shapes)

    @property
    def n_segments(self) -> int:
        return self.freq_sq.shape[0]

    @property
    def n_modes(self) -> int:
        return self.freq_sq.shape[1]

    @property
    def n_observed(self) -> int:
        return len(self.observed_dofs)

    def check_compatible(self, n_dof: int) -> None:
        if self.observed_dofs[-1] >= n_dof:
            raise ValueError(
                f"observed DOF {self.observed_dofs[-1]} is out of range for a "
                f"model with {n_dof} DOFs"
            )


def flatten_dataset(dataset: ModalDataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack the dataset segment-major, then mode, then sensor.

    Returns ``(omega_hat_sq, psi_hat)`` of lengths ``n_segments * n_modes``
    and ``n_segments * n_modes * n_observed``.
    """
    return dataset.freq_sq.reshape(-1).copy(), dataset.mode_shapes.reshape(-1).copy()


def unflatten_dataset(
    omega_hat_sq: np.ndarray,
    psi_hat: np.ndarray,
    observed_dofs,
    n_modes: int,
) -> ModalDataset:
    """Inverse of :func:`flatten_dataset`."""
    omega_hat_sq = np.asarray(omega_hat_sq, dtype=float)
    psi_hat = np.asarray(psi_hat, dtype=float)
    n_obs = len(observed_dofs)
    if omega_hat_sq.size % n_modes != 0:
        raise ValueError("flattened frequency vector length is not a multiple of n_modes")
    ns = omega_hat_sq.size // n_modes
    if psi_hat.size != ns * n_modes * n_obs:
        raise ValueError("flattened shape vector length is inconsistent")
    return ModalDataset(
        observed_dofs=tuple(observed_dofs),
        freq_sq=omega_hat_sq.reshape(ns, n_modes),
        mode_shapes=psi_hat.reshape(ns, n_modes, n_obs),
    )


@dataclass(frozen=True)
class SelectionMaps:
    """Explicit observation operators.

    ``gamma`` is the 0/1 selection matrix mapping the stacked system mode
    shapes (length ``n_modes * n_dof``) to the flattened observed components
    in (segment, mode, sensor) order. ``ell`` is the vertical stack of
    ``n_segments`` identity blocks mapping the system frequencies to the
    flattened identified frequencies.
    """

    gamma: np.ndarray
    ell: np.ndarray


def build_selection(observed_dofs, n_dof: int, n_modes: int, n_segments: int) -> SelectionMaps:
    dofs = tuple(int(d) for d in observed_dofs)
    if len(set(dofs)) != len(dofs):
        raise ValueError("observed_dofs must not contain duplicates")
    if any(d < 0 or d >= n_dof for d in dofs):
        raise ValueError(f"observed_dofs must lie in [0, {n_dof})")
    n_obs = len(dofs)
    gamma = np.zeros((n_obs * n_modes * n_segments, n_modes * n_dof))
    row = 0
    for _ in range(n_segments):
        for i in range(n_modes):
            for d in dofs:
                gamma[row, i * n_dof + d] = 1.0
                row += 1
    ell = np.tile(np.eye(n_modes), (n_segments, 1))
    gamma.setflags(write=False)
    ell.setflags(write=False)
    return SelectionMaps(gamma=gamma, ell=ell)


# ---------------------------------------------------------------------------
# Dataset file format (JSON)
#
#   {"n_segments": 10, "n_modes": 8, "observed_dofs": [0, 1, ..],
#    "freq_sq": [[..], ..], "mode_shapes": [[[..], ..], ..],
#    "freq_unit": "rad2_per_s2" | "hz"}
#
# With "freq_unit": "hz" the freq_sq array holds plain natural frequencies
# in Hz; they are converted to rad^2/s^2 on load via (2*pi*f)^2.
# ---------------------------------------------------------------------------


def dataset_to_dict(dataset: ModalDataset) -> dict:
    return {
        "n_segments": dataset.n_segments,
        "n_modes": dataset.n_modes,
        "observed_dofs": list(dataset.observed_dofs),
        "freq_sq": dataset.freq_sq.tolist(),
        "mode_shapes": dataset.mode_shapes.tolist(),
        "freq_unit": "rad2_per_s2",
    }


def dataset_from_dict(doc: dict) -> ModalDataset:
    if not isinstance(doc, dict):
        raise FormatError("<root>", "dataset document must be a JSON object")
    for key in ("observed_dofs", "freq_sq", "mode_shapes"):
        if key not in doc:
            raise FormatError(key, "required field is missing")
    try:
        freq = np.asarray(doc["freq_sq"], dtype=float)
    except (TypeError, ValueError):
        raise FormatError("freq_sq", "must be a numeric segments x modes array") from None
    if freq.ndim != 2:
        raise FormatError("freq_sq", f"must be 2-dimensional, got {freq.ndim} dims")
    unit = doc.get("freq_unit", "rad2_per_s2")
    if unit == "hz":
        if np.any(freq <= 0):
            raise FormatError("freq_sq", "frequencies in Hz must be positive")
        freq = (2.0 * np.pi * freq) ** 2
    elif unit != "rad2_per_s2":
        raise FormatError("freq_unit", f"unknown unit {unit!r}")
    try:
        shapes = np.asarray(doc["mode_shapes"], dtype=float)
    except (TypeError, ValueError):
        raise FormatError(
            "mode_shapes", "must be a numeric segments x modes x sensors array"
        ) from None
    if shapes.ndim != 3:
        raise FormatError("mode_shapes", f"must be 3-dimensional, got {shapes.ndim} dims")
    for key, expected in (("n_segments", freq.shape[0]), ("n_modes", freq.shape[1])):
        if key in doc and int(doc[key]) != expected:
            raise FormatError(key, f"declares {doc[key]} but arrays imply {expected}")
    try:
        return ModalDataset(
            observed_dofs=tuple(int(d) for d in doc["observed_dofs"]),
            freq_sq=freq,
            mode_shapes=shapes,
        )
    except ValueError as exc:
        raise FormatError("<dataset>", str(exc)) from None


def load_dataset(path) -> ModalDataset:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("<json>", f"malformed JSON: {exc}") from None
    return dataset_from_dict(doc)


def save_dataset(dataset: ModalDataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(dataset), fh, indent=1)
        fh.write("\n")
