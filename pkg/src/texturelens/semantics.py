"""Latent-space semantics: cluster prototypes, guidance vectors, edits,
selective attribute transfer, and the closed-form weight-factorization
baseline.

A prototype condenses a cluster of encoded examples into one w vector by
centering on the space's centre of mass, taking the top left-singular vector
of the stacked cluster, and projecting the centered mean onto it. The
guidance vector for an attribute is the difference between the presence and
absence prototypes; edits walk along its unit vector, and transfer matches a
target's projection to a reference's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import InversionOptions, invert_optim
from .genmodel import GeneratorHandle, LatentVector, LinearPlantedGenerator, W

DEGENERATE_TOL = 1e-12
MIN_DIRECTION_NORM = 1e-9


@dataclass(frozen=True)
class Prototype:
    w_ptype: LatentVector
    cluster_size: int
    attribute: str = ""
    presence: bool = True


@dataclass(frozen=True)
class GuidanceVector:
    d: LatentVector
    attribute: str = ""
    normalized: bool = False
    p_present: Prototype | None = None
    p_absent: Prototype | None = None

    def __post_init__(self):
        norm = np.linalg.norm(self.d.values)
        if norm <= MIN_DIRECTION_NORM:
            raise ValueError("guidance vector is degenerate (zero direction)")
        if self.normalized and abs(norm - 1.0) > 1e-9:
            raise ValueError("normalized flag set but direction is not unit length")

    def unit(self) -> np.ndarray:
        return self.d.values / np.linalg.norm(self.d.values)


@dataclass(frozen=True)
class SefaBasis:
    directions: np.ndarray  # (k, dim_w) rows, descending significance
    singular_values: np.ndarray


def get_prototype(ws, w_avg: LatentVector) -> Prototype:
    """Condense encoded cluster members into a prototype vector.

    Centers by w_avg, takes the SVD of the stacked centered vectors, and
    projects the centered mean onto the singular vector of the largest
    singular value (first in column order on ties).
    """
    vectors = [w.values for w in ws]
    if not vectors:
        raise ValueError("prototype needs at least one vector")
    centered = np.stack(vectors, axis=1) - w_avg.values[:, None]
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    if s.max() <= DEGENERATE_TOL:
        raise ValueError("degenerate cluster: all vectors equal the centre of mass")
    u_s = u[:, int(np.argmax(s))]
    mean_centered = centered.mean(axis=1)
    proto = w_avg.values + u_s * (u_s @ mean_centered)
    return Prototype(LatentVector(proto, W), cluster_size=len(vectors))


# encoder configuration for query-example encoding: reconstruction loss with
# amplitude thresholding, the ablation winner; the normalized autocorrelation
# term destabilizes on sparse, mostly-silent examples
QUERY_ENCODER_OPTS = InversionOptions(
    autocorr_weight=0.0, use_mask=True, threshold_db=-25.0)


def get_direction(present_specs, absent_specs, gen: GeneratorHandle,
                  opts: InversionOptions = QUERY_ENCODER_OPTS,
                  attribute: str = "") -> GuidanceVector:
    """Encode both example clusters and return P_present - P_absent."""
    if not present_specs or not absent_specs:
        raise ValueError("both clusters must be non-empty")
    w_avg = gen.w_avg
    ws_present = [invert_optim(s, gen, opts)[0] for s in present_specs]
    ws_absent = [invert_optim(s, gen, opts)[0] for s in absent_specs]
    return direction_from_latents(ws_present, ws_absent, w_avg, attribute)


def direction_from_latents(ws_present, ws_absent, w_avg: LatentVector,
                           attribute: str = "") -> GuidanceVector:
    p1 = get_prototype(ws_present, w_avg)
    p2 = get_prototype(ws_absent, w_avg)
    d = p1.w_ptype.values - p2.w_ptype.values
    if np.linalg.norm(d) <= MIN_DIRECTION_NORM:
        raise ValueError("attribute not separable: prototypes coincide")
    return GuidanceVector(
        d=LatentVector(d, W),
        attribute=attribute,
        normalized=False,
        p_present=Prototype(p1.w_ptype, p1.cluster_size, attribute, True),
        p_absent=Prototype(p2.w_ptype, p2.cluster_size, attribute, False),
    )


def normalize(direction: GuidanceVector) -> GuidanceVector:
    return GuidanceVector(
        d=LatentVector(direction.unit(), W),
        attribute=direction.attribute,
        normalized=True,
        p_present=direction.p_present,
        p_absent=direction.p_absent,
    )


def edit(w: LatentVector, direction: GuidanceVector, alpha: float) -> LatentVector:
    """w + alpha * unit(d): moves only the component along the direction."""
    return LatentVector(w.values + alpha * direction.unit(), W)


def transfer_attribute(w: LatentVector, w_ref: LatentVector,
                       w_prototype: LatentVector,
                       direction: GuidanceVector) -> LatentVector:
    """Match the target's projection along d to the reference's.

    With unit d and projections measured from the prototype, the update
    w + (proj_w - proj_ref) d lands the output exactly on the reference's
    projection while leaving the orthogonal complement of w untouched.
    """
    d_hat = direction.unit()
    w_projection = (w_prototype.values - w.values) @ d_hat
    ref_projection = (w_prototype.values - w_ref.values) @ d_hat
    return LatentVector(w.values + (w_projection - ref_projection) * d_hat, W)


def sefa_directions(gen: GeneratorHandle, k: int) -> SefaBasis:
    """Top-k right singular vectors of the first synthesis-layer weights.

    Computed as the descending eigenvectors of A^T A; the planted generator
    exposes its decoder matrix, external ones answer the WGT message.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > gen.dim_w:
        raise ValueError(f"k={k} exceeds the latent dimension {gen.dim_w}")
    if isinstance(gen, LinearPlantedGenerator):
        weights = gen.basis_matrix
    else:
        weights = gen.first_layer_weights()
    ata = weights.T @ weights
    eigvals, eigvecs = np.linalg.eigh(ata)
    order = np.argsort(eigvals)[::-1][:k]
    sv = np.sqrt(np.maximum(eigvals[order], 0.0))
    return SefaBasis(directions=eigvecs[:, order].T.copy(), singular_values=sv)
