"""Spectrogram-to-latent inversion by direct optimization.

Minimizes masked spectrogram reconstruction error plus a weighted
autocorrelation term over w, by preconditioned gradient descent with
backtracking (monotone in the total loss). The planted generator gets exact
analytic gradients; external generators fall back to central finite
differences, which costs two synthesis calls per coordinate per step.
A closed-form least-squares oracle over the planted decoder cross-checks
the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .audio import (
    Spectrogram,
    autocorr_features,
    get_filterbank,
    spectrogram_feature_maps,
)
from .genmodel import (
    GeneratorHandle,
    LatentVector,
    LinearPlantedGenerator,
    W,
)

N_LOSS_BANDS = 16


@dataclass(frozen=True)
class InversionOptions:
    max_iters: int = 500
    step_size: float = 0.05
    init: str = "w_avg"  # "w_avg" | "random" | "provided"
    init_w: LatentVector | None = None
    use_mask: bool = False
    threshold_db: float = -25.0
    autocorr_weight: float = 0.1
    tolerance: float = 1e-7
    seed: int = 0
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.init not in ("w_avg", "random", "provided"):
            raise ValueError("init must be w_avg, random, or provided")
        if self.init == "provided" and self.init_w is None:
            raise ValueError("init='provided' requires init_w")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    autocorr: float
    total: float
    latent: float | None = None


def _mask_for(spec: Spectrogram, opts: InversionOptions) -> np.ndarray:
    if opts.use_mask:
        return spec.values >= opts.threshold_db
    return np.ones_like(spec.values, dtype=bool)


def _masked(values: np.ndarray, mask: np.ndarray, floor: float) -> np.ndarray:
    return np.where(mask, values, floor)


def _autocorr_of(values: np.ndarray, floor: float) -> np.ndarray:
    maps = spectrogram_feature_maps(values, floor, N_LOSS_BANDS)
    return autocorr_features(maps).values


def _loss_terms(spec: Spectrogram, synth_values: np.ndarray, mask: np.ndarray,
                opts: InversionOptions):
    floor = spec.floor_db
    n_kept = int(mask.sum())
    diff = (synth_values - spec.values) * mask
    recon = float((diff ** 2).sum() / n_kept)
    ref = _autocorr_of(_masked(spec.values, mask, floor), floor)
    got = _autocorr_of(_masked(synth_values, mask, floor), floor)
    denom = float((ref ** 2).sum())
    ac = float(((got - ref) ** 2).sum() / denom) if denom > 0 else 0.0
    return recon, ac, diff, ref, got, denom, n_kept


def eval_loss(spec: Spectrogram, w: LatentVector, gen: GeneratorHandle,
              w_true: LatentVector | None = None,
              opts: InversionOptions = InversionOptions()) -> LossBreakdown:
    """Exact loss breakdown at w; the latent term appears iff w_true is given."""
    synth = gen.synthesize(w)
    mask = _mask_for(spec, opts)
    recon, ac, *_ = _loss_terms(spec, synth.values, mask, opts)
    latent = None
    total = recon + opts.autocorr_weight * ac
    if w_true is not None:
        latent = float(np.sum((w_true.values - w.values) ** 2))
        total += latent
    return LossBreakdown(recon=recon, autocorr=ac, total=total, latent=latent)


def _planted_loss_and_grad(spec: Spectrogram, w_values: np.ndarray,
                           gen: LinearPlantedGenerator, mask: np.ndarray,
                           opts: InversionOptions, want_grad: bool):
    floor = spec.floor_db
    unclamped = gen.decode_unclamped(w_values)
    synth = np.clip(unclamped, floor, 0.0)
    recon, ac, diff, ref, got, denom, n_kept = _loss_terms(spec, synth, mask, opts)
    total = recon + opts.autocorr_weight * ac
    if not want_grad:
        return total, recon, ac, None
    active = (unclamped > floor) & (unclamped < 0.0)
    grad_cells = (2.0 / n_kept) * diff * active
    if denom > 0 and opts.autocorr_weight != 0.0:
        maps = spectrogram_feature_maps(_masked(synth, mask, floor), floor, N_LOSS_BANDS)
        coeff = 2.0 * (got - ref) / denom
        conv_part = fftconvolve(coeff, maps, mode="full", axes=1)[:, : maps.shape[1]]
        corr_part = fftconvolve(maps, coeff[:, ::-1], mode="full", axes=1)[:, maps.shape[1] - 1:]
        d_maps = conv_part + corr_part
        fb = get_filterbank(N_LOSS_BANDS, synth.shape[0])
        grad_cells = grad_cells + opts.autocorr_weight * (fb.T @ d_maps) * mask * active
    grad_w = gen.basis_matrix.T @ grad_cells.ravel()
    return total, recon, ac, grad_w


def _generic_loss(spec: Spectrogram, w_values: np.ndarray, gen: GeneratorHandle,
                  mask: np.ndarray, opts: InversionOptions):
    synth = gen.synthesize(LatentVector(w_values, W)).values
    recon, ac, *_ = _loss_terms(spec, synth, mask, opts)
    return recon + opts.autocorr_weight * ac, recon, ac


def _fd_gradient(spec, w_values, gen, mask, opts):
    grad = np.empty_like(w_values)
    h = opts.fd_step
    for i in range(len(w_values)):
        probe = w_values.copy()
        probe[i] += h
        up, *_ = _generic_loss(spec, probe, gen, mask, opts)
        probe[i] -= 2 * h
        dn, *_ = _generic_loss(spec, probe, gen, mask, opts)
        grad[i] = (up - dn) / (2 * h)
    return grad


def loss_gradient(spec: Spectrogram, w: LatentVector, gen: GeneratorHandle,
                  opts: InversionOptions = InversionOptions()) -> np.ndarray:
    """Gradient of the inversion loss at w (analytic for planted decoders)."""
    mask = _mask_for(spec, opts)
    if isinstance(gen, LinearPlantedGenerator):
        return _planted_loss_and_grad(spec, w.values, gen, mask, opts, True)[3]
    return _fd_gradient(spec, w.values.copy(), gen, mask, opts)


def _initial_w(spec, gen, opts) -> np.ndarray:
    if opts.init == "provided":
        return opts.init_w.values.copy()
    if opts.init == "random":
        return gen.map_latent(gen.sample_z(opts.seed)).values
    return gen.w_avg.values.copy()


class _PlantedObjective:
    """Reduced-space inversion loss for the linear planted decoder.

    Linearity collapses the masked reconstruction term to a latent-space
    quadratic and the feature maps to an affine function of w, so one
    iteration costs O(dim^2) instead of a full decode. The decoder's output
    clamp is not modeled here; the loss the caller reports at the solution
    is re-evaluated exactly.
    """

    def __init__(self, spec: Spectrogram, gen: LinearPlantedGenerator,
                 mask: np.ndarray, opts: InversionOptions):
        floor = spec.floor_db
        basis = gen.basis_matrix
        n_bins = spec.values.shape[0]
        fb = get_filterbank(N_LOSS_BANDS, n_bins)
        flat_mask = mask.ravel()
        target_lift = (spec.values - gen.bias_flat.reshape(spec.values.shape))
        masked_lift = (target_lift * mask).ravel()
        self.n_kept = int(mask.sum())
        if mask.all():
            self.gram = gen.gram
            self.rhs = basis.T @ masked_lift
            fbb_key = "_loss_fbb"
            cached = getattr(gen, fbb_key, None)
            if cached is None:
                cached = np.einsum(
                    "kf,ftd->ktd", fb,
                    basis.reshape(n_bins, -1, basis.shape[1]), optimize=True)
                setattr(gen, fbb_key, cached)
            self.fbb = cached
            bias_lift = gen.bias_flat.reshape(spec.values.shape) - floor
            self.base_maps = fb @ bias_lift
        else:
            kept = np.flatnonzero(flat_mask)
            basis_kept = basis[kept]
            self.gram = basis_kept.T @ basis_kept
            self.rhs = basis_kept.T @ masked_lift[kept]
            masked_basis = basis * flat_mask[:, None]
            self.fbb = np.einsum(
                "kf,ftd->ktd", fb,
                masked_basis.reshape(n_bins, -1, basis.shape[1]), optimize=True)
            bias_lift = np.where(mask, gen.bias_flat.reshape(spec.values.shape) - floor, 0.0)
            self.base_maps = fb @ bias_lift
        self.sq_target = float(masked_lift @ masked_lift)
        ref_maps = fb @ np.where(mask, spec.values - floor, 0.0)
        self.ref_ac = autocorr_features(ref_maps).values
        self.denom = float((self.ref_ac ** 2).sum())
        self.weight = opts.autocorr_weight

    def __call__(self, w: np.ndarray, want_grad: bool):
        gw = self.gram @ w
        recon = (self.sq_target - 2.0 * (w @ self.rhs) + w @ gw) / self.n_kept
        maps = self.base_maps + np.einsum("ktd,d->kt", self.fbb, w)
        grad = None
        if self.denom > 0:
            got = autocorr_features(maps).values
            ac = float(((got - self.ref_ac) ** 2).sum() / self.denom)
        else:
            ac = 0.0
        total = recon + self.weight * ac
        if want_grad:
            grad = 2.0 * (gw - self.rhs) / self.n_kept
            if self.denom > 0 and self.weight != 0.0:
                coeff = 2.0 * (got - self.ref_ac) / self.denom
                t = maps.shape[1]
                conv_part = fftconvolve(coeff, maps, mode="full", axes=1)[:, :t]
                corr_part = fftconvolve(maps, coeff[:, ::-1], mode="full", axes=1)[:, t - 1:]
                grad = grad + self.weight * np.einsum(
                    "ktd,kt->d", self.fbb, conv_part + corr_part)
        return float(recon), ac, float(total), grad

    def curvature_along(self, p: np.ndarray) -> float:
        return 2.0 * (p @ (self.gram @ p)) / self.n_kept


def invert_optim(spec: Spectrogram, gen: GeneratorHandle,
                 opts: InversionOptions = InversionOptions(), trace=None):
    """Gradient-descent inversion; returns (w, loss breakdown at w).

    Steepest descent with Jacobi preconditioning, a line-search step sized by
    the reconstruction term's exact curvature, and backtracking halving so
    accepted steps never increase the total loss. Planted decoders run in a
    reduced latent-space objective (see `_PlantedObjective`); other
    generators pay two synthesis calls per coordinate for central-difference
    gradients. Deterministic given options and seed; pass a list as ``trace``
    to record the accepted loss sequence.
    """
    mask = _mask_for(spec, opts)
    planted = isinstance(gen, LinearPlantedGenerator)
    if planted:
        objective = _PlantedObjective(spec, gen, mask, opts)
        diag = np.diag(objective.gram)
        # coordinates invisible under the mask stay frozen at the init
        observable = diag > 1e-8 * diag.max()
        precond = np.where(observable, 1.0 / np.maximum(diag, 1e-300), 0.0)

        def loss_grad(wv, want_grad=True):
            recon, ac, total, grad = objective(wv, want_grad)
            return total, recon, ac, grad
    else:
        objective = None
        precond = None

        def loss_grad(wv, want_grad=True):
            total, recon, ac = _generic_loss(spec, wv, gen, mask, opts)
            grad = _fd_gradient(spec, wv, gen, mask, opts) if want_grad else None
            return total, recon, ac, grad

    w = _initial_w(spec, gen, opts)
    total, recon, ac, grad = loss_grad(w)
    if not np.isfinite(total):
        raise RuntimeError("diverged: non-finite loss at initialization")
    if trace is not None:
        trace.append(total)
    best_w = w.copy()
    best = total
    for _ in range(opts.max_iters):
        if total <= opts.tolerance:
            break
        direction = grad * precond if precond is not None else grad
        if planted:
            curv = objective.curvature_along(direction)
            step = (grad @ direction) / curv if curv > 0 else opts.step_size
        else:
            step = opts.step_size
        accepted = False
        for _ in range(60):
            trial = w - step * direction
            t_total, t_recon, t_ac, _ = loss_grad(trial, want_grad=False)
            if not np.isfinite(t_total):
                raise RuntimeError("diverged: non-finite loss")
            if t_total <= total:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = total - t_total
        w = trial
        total, recon, ac = t_total, t_recon, t_ac
        if trace is not None:
            trace.append(total)
        if total < best:
            best = total
            best_w = w.copy()
        if improvement < opts.tolerance:
            break
        _, _, _, grad = loss_grad(w)
    final = eval_loss(spec, LatentVector(best_w, W), gen, opts=opts)
    return LatentVector(best_w, W), final


def invert_closed_form(spec: Spectrogram, gen: LinearPlantedGenerator) -> LatentVector:
    """Least-squares inversion oracle for the planted decoder.

    Exact minimizer of the unmasked, unclamped reconstruction; unique while
    the decoder columns stay independent.
    """
    if not isinstance(gen, LinearPlantedGenerator):
        raise TypeError("closed-form inversion needs a planted generator")
    return LatentVector(gen.solve_least_squares(spec.values.ravel()), W)


def encode_clips(specs, gen, opts: InversionOptions = InversionOptions()):
    """Invert a batch of spectrograms to w vectors."""
    return [invert_optim(s, gen, opts)[0] for s in specs]
