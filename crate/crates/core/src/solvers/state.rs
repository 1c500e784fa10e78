//! Iteration state and the per-iteration message updates over the stacked real system.

use ndarray::{Array1, Array2, Zip};

use crate::num::Real;
use crate::scene::PriorParams;

/// Full message-passing state over the real stacked system.
///
/// Rows index the `2 N_H` real measurements, columns the `N_s` voxels. All
/// quantities are expressed in the solver's internally rescaled units (the
/// measurement rows are multiplied by `scale`), which leaves `x̂`, `σ^x`, `r̄`
/// and `σ^r` unchanged.
#[derive(Debug, Clone)]
pub struct SolverState<T> {
    pub x_hat: Array1<T>,
    pub sigma_x: Array1<T>,
    pub h_hat: Array2<T>,
    pub sigma_h: Array2<T>,
    pub p_bar: Array1<T>,
    pub sigma_p: Array1<T>,
    pub h_bar_s: Array1<T>,
    pub sigma_hs: Array1<T>,
    pub s_bar: Array1<T>,
    pub sigma_s: Array1<T>,
    pub r_bar: Array1<T>,
    pub sigma_r: Array1<T>,
    /// Voxels with no informative measurement this iteration.
    pub blind: Vec<bool>,
    /// Empty unless the coupling consumes them.
    pub q_bar: Array2<T>,
    pub sigma_q: Array2<T>,
    pub t: usize,
    pub scale: T,
}

impl<T: Real> SolverState<T> {
    /// Prior-moment initialization with the given channel estimate.
    pub fn init(prior: &PriorParams<T>, h_hat: Array2<T>, sigma_h: Array2<T>, scale: T) -> Self {
        let (m, n) = h_hat.dim();
        let z = |k| Array1::from_elem(k, T::zero());
        Self {
            x_hat: Array1::from_elem(n, prior.mean()),
            sigma_x: Array1::from_elem(n, prior.variance()),
            h_hat,
            sigma_h,
            p_bar: z(m),
            sigma_p: z(m),
            h_bar_s: z(m),
            sigma_hs: z(m),
            s_bar: z(m),
            sigma_s: z(m),
            r_bar: z(n),
            sigma_r: z(n),
            blind: vec![false; n],
            q_bar: Array2::zeros((0, 0)),
            sigma_q: Array2::zeros((0, 0)),
            t: 1,
            scale,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.h_hat.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.h_hat.ncols()
    }
}

/// `p̄ = Σ ĥ x̂ − s̄(t−1) Σ(σ^h x̂² + ĥ² σ^x)`, `σ^p = Σ(σ^h x̂² + ĥ² σ^x + σ^h σ^x)`.
pub fn p_step<T: Real>(st: &SolverState<T>) -> (Array1<T>, Array1<T>) {
    let h2 = st.h_hat.mapv(|h| h * h);
    let x2 = st.x_hat.mapv(|x| x * x);
    let onsager = &st.sigma_h.dot(&x2) + &h2.dot(&st.sigma_x);
    let p_bar = &st.h_hat.dot(&st.x_hat) - &(&st.s_bar * &onsager);
    let sigma_p = &onsager + &st.sigma_h.dot(&st.sigma_x);
    (p_bar, sigma_p)
}

/// Result of the input-side update.
#[derive(Debug, Clone)]
pub struct RStep<T> {
    pub r_bar: Array1<T>,
    pub sigma_r: Array1<T>,
    /// Columns whose precision `Σ ĥ² σ^s` vanished; they carry the prior moments.
    pub blind: Vec<bool>,
}

/// `σ^r = (Σ ĥ² σ^s)^{-1}`, `r̄ = x̂(1 − σ^r Σ σ^h σ^s) + σ^r Σ ĥ s̄`.
pub fn r_step<T: Real>(st: &SolverState<T>, prior: &PriorParams<T>) -> RStep<T> {
    let h2 = st.h_hat.mapv(|h| h * h);
    let precision = h2.t().dot(&st.sigma_s);
    let hs = st.sigma_h.t().dot(&st.sigma_s);
    let corr = st.h_hat.t().dot(&st.s_bar);
    let n = st.num_cols();
    let mut r_bar = Array1::from_elem(n, T::zero());
    let mut sigma_r = Array1::from_elem(n, T::zero());
    let mut blind = vec![false; n];
    for j in 0..n {
        let prec = precision[j];
        if !(prec > T::zero()) || !prec.is_finite() {
            blind[j] = true;
            r_bar[j] = prior.mean();
            sigma_r[j] = prior.variance();
            continue;
        }
        let sr = T::one() / prec;
        r_bar[j] = st.x_hat[j] * (T::one() - sr * hs[j]) + sr * corr[j];
        sigma_r[j] = sr;
    }
    RStep { r_bar, sigma_r, blind }
}

/// `σ^q = (x̂² σ^s)^{-1}`, `q̄ = ĥ(1 − σ^q σ^x σ^s) + σ^q x̂ s̄`; columns with
/// `x̂ = 0` get `σ^q = ∞` and `q̄ = ĥ`.
pub fn q_step<T: Real>(st: &SolverState<T>) -> (Array2<T>, Array2<T>) {
    let dim = st.h_hat.dim();
    let mut q_bar = Array2::from_elem(dim, T::zero());
    let mut sigma_q = Array2::from_elem(dim, T::zero());
    for i in 0..dim.0 {
        let (s, ss) = (st.s_bar[i], st.sigma_s[i]);
        Zip::from(q_bar.row_mut(i))
            .and(sigma_q.row_mut(i))
            .and(st.h_hat.row(i))
            .and(&st.x_hat)
            .and(&st.sigma_x)
            .for_each(|q, sq, &h, &x, &sx| {
                let denom = x * x * ss;
                if denom > T::zero() && denom.is_finite() {
                    let v = T::one() / denom;
                    *sq = v;
                    *q = h * (T::one() - v * sx * ss) + v * x * s;
                } else {
                    *sq = T::infinity();
                    *q = h;
                }
            });
    }
    (q_bar, sigma_q)
}
