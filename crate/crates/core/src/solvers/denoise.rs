//! Scalar posterior maps used by the message-passing loop.

use crate::error::{Error, Result};
use crate::num::{log_normal_pdf, logistic, Real};
use crate::scene::PriorParams;

/// Posterior mean and variance of `x` under the spike-and-slab prior given the
/// pseudo-observation `N(x; r̄, σ^r)`.
///
/// An infinite `sigma_r` carries no information and returns the prior moments.
pub fn gx_denoise<T: Real>(r_bar: T, sigma_r: T, prior: &PriorParams<T>) -> Result<(T, T)> {
    if !(sigma_r > T::zero()) {
        return Err(Error::invalid(format!("gx_denoise needs sigma_r > 0, got {sigma_r}")));
    }
    if sigma_r.is_infinite() {
        return Ok((prior.mean(), prior.variance()));
    }
    let lambda = prior.sparsity;
    if lambda == T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let (theta, s0) = (prior.slab_mean, prior.slab_var);
    let denom = s0 + sigma_r;
    let m = (theta * sigma_r + r_bar * s0) / denom;
    let v = s0 * sigma_r / denom;
    if lambda == T::one() {
        return Ok((m, v));
    }
    let log_slab = lambda.ln() + log_normal_pdf(r_bar, theta, denom);
    let log_spike = (T::one() - lambda).ln() + log_normal_pdf(r_bar, T::zero(), sigma_r);
    let pi = logistic(log_slab - log_spike);
    let x_hat = pi * m;
    let var = pi * v + pi * (T::one() - pi) * m * m;
    Ok((x_hat, var))
}

/// Hard-occlusion channel posterior: the Dirac prior selected by the occlusion bit.
#[inline]
pub fn gh_denoise_hard<T: Real>(v: bool, h_free: T, sigma_h_floor: T) -> (T, T) {
    (if v { h_free } else { T::zero() }, sigma_h_floor)
}

/// Shared Bernoulli weight for a complex channel entry under the two-point
/// prior `{h_free w.p. 1 − ρ, 0 w.p. ρ}`, given per-component pseudo-observations.
///
/// `parts` holds `(h_free, q̄, σ^q)` for the real and imaginary components.
pub fn soft_weight<T: Real>(rho: T, parts: &[(T, T, T)]) -> Result<T> {
    if !(rho >= T::zero() && rho <= T::one()) {
        return Err(Error::invalid(format!("blockage probability {rho} outside [0, 1]")));
    }
    if rho == T::zero() {
        return Ok(T::one());
    }
    if rho == T::one() {
        return Ok(T::zero());
    }
    let mut llr = (T::one() - rho).ln() - rho.ln();
    for &(h, q, sq) in parts {
        if !(sq > T::zero()) || sq.is_nan() {
            return Err(Error::invalid(format!("gh_denoise_soft needs sigma_q > 0, got {sq}")));
        }
        if sq.is_infinite() {
            continue;
        }
        // log N(h; q, σ) − log N(0; q, σ)
        llr += (q * q - (h - q) * (h - q)) / (T::lit(2.0) * sq);
    }
    Ok(logistic(llr))
}

/// Soft (bilinear) channel posterior for a single real component.
pub fn gh_denoise_soft<T: Real>(rho: T, h_free: T, q_bar: T, sigma_q: T) -> Result<(T, T)> {
    let w = soft_weight(rho, &[(h_free, q_bar, sigma_q)])?;
    Ok(soft_moments(w, h_free))
}

#[inline]
pub fn soft_moments<T: Real>(w: T, h_free: T) -> (T, T) {
    (w * h_free, w * (T::one() - w) * h_free * h_free)
}

/// Gaussian product of the output prior `N(p̄, σ^p)` and the observation likelihood.
pub fn output_posterior<T: Real>(p_bar: T, sigma_p: T, h_obs: T, sigma_w: T) -> Result<(T, T)> {
    let denom = sigma_p + sigma_w;
    if !(denom > T::zero()) {
        return Err(Error::invalid("output_posterior needs sigma_p + sigma_w > 0"));
    }
    Ok(((sigma_w * p_bar + sigma_p * h_obs) / denom, sigma_p * sigma_w / denom))
}

/// Scaled residual `s̄` and its variance `σ^s`.
pub fn residual_step<T: Real>(p_bar: T, sigma_p: T, h_obs: T, sigma_w: T) -> Result<(T, T)> {
    let denom = sigma_p + sigma_w;
    if !(denom > T::zero()) {
        return Err(Error::invalid("residual_step needs sigma_p + sigma_w > 0"));
    }
    Ok(((h_obs - p_bar) / denom, T::one() / denom))
}

/// `F(p̄, σ^p) = log N(ĥ; p̄, σ^p + σ^w)`.
pub fn output_log_partition<T: Real>(p_bar: T, sigma_p: T, h_obs: T, sigma_w: T) -> T {
    log_normal_pdf(h_obs, p_bar, sigma_p + sigma_w)
}

/// Residual of `∂F/∂σ^p = ½[(∂F/∂p̄)² + ∂²F/∂p̄²]`, all derivatives by central
/// differences with step `step`.
pub fn check_f_identity(p_bar: f64, sigma_p: f64, h_obs: f64, sigma_w: f64, step: f64) -> f64 {
    let f = |p: f64, s: f64| output_log_partition(p, s, h_obs, sigma_w);
    let d = step;
    let f1 = (f(p_bar + d, sigma_p) - f(p_bar - d, sigma_p)) / (2.0 * d);
    let f11 = (f(p_bar + d, sigma_p) - 2.0 * f(p_bar, sigma_p) + f(p_bar - d, sigma_p)) / (d * d);
    let f2 = (f(p_bar, sigma_p + d) - f(p_bar, sigma_p - d)) / (2.0 * d);
    (f2 - 0.5 * (f1 * f1 + f11)).abs()
}
