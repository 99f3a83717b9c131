use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Estimated parameters with their Gauss–Newton covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// √(Σ wᵢ rᵢ²) at the optimum.
    pub residual_norm: f64,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub n_iter: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Parameters held fixed, reported for completeness.
    #[serde(default)]
    pub fixed: Vec<(String, f64)>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Value of a free or fixed parameter.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name)
            .map(|k| self.params[k])
            .or_else(|| self.fixed.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }

    /// 1σ uncertainty of a free parameter; 0 for fixed ones.
    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name)
            .map(|k| self.sigmas[k])
            .or_else(|| self.fixed.iter().find(|(n, _)| n == name).map(|_| 0.0))
    }

    /// All parameter values, free and fixed, by name.
    pub fn all_params(&self) -> std::collections::BTreeMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(self.params.iter().copied())
            .chain(self.fixed.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Converged when an accepted step lowers χ² by less than this fraction.
    pub ftol: f64,
    /// Converged when every parameter moves less than this fraction of its scale.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-12,
        }
    }
}

pub type ModelFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a;
pub type JacobianFn<'a> = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + 'a;

/// A weighted least-squares problem `min Σ wᵢ (yᵢ − fᵢ(p))²`.
pub struct Problem<'a> {
    pub names: Vec<String>,
    pub p0: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Typical magnitude of each parameter; sets finite-difference steps
    /// and the step-size convergence test.
    pub scales: Vec<f64>,
    pub y: &'a [f64],
    pub weights: &'a [f64],
}

impl<'a> Problem<'a> {
    /// Unbounded problem with scales taken from `p0`.
    pub fn new(names: &[&str], p0: &[f64], y: &'a [f64], weights: &'a [f64]) -> Self {
        Problem {
            names: names.iter().map(|s| s.to_string()).collect(),
            p0: p0.to_vec(),
            lower: vec![f64::NEG_INFINITY; p0.len()],
            upper: vec![f64::INFINITY; p0.len()],
            scales: p0
                .iter()
                .map(|&v| if v != 0.0 { v.abs() } else { 1.0 })
                .collect(),
            y,
            weights,
        }
    }

    pub fn with_bounds(mut self, lower: &[f64], upper: &[f64]) -> Self {
        self.lower = lower.to_vec();
        self.upper = upper.to_vec();
        self
    }

    fn validate(&self) -> Result<()> {
        let p = self.p0.len();
        if p == 0 {
            return Err(Error::argument("no free parameters"));
        }
        if self.names.len() != p
            || self.lower.len() != p
            || self.upper.len() != p
            || self.scales.len() != p
        {
            return Err(Error::argument("parameter metadata lengths disagree"));
        }
        if self.y.len() != self.weights.len() {
            return Err(Error::argument("data and weights lengths disagree"));
        }
        if self.y.is_empty() {
            return Err(Error::argument("no data points"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::argument("weights must be finite and non-negative"));
        }
        for k in 0..p {
            if !(self.lower[k] <= self.p0[k] && self.p0[k] <= self.upper[k]) {
                return Err(Error::argument(format!(
                    "initial value of '{}' ({}) lies outside its bounds [{}, {}]",
                    self.names[k], self.p0[k], self.lower[k], self.upper[k]
                )));
            }
        }
        Ok(())
    }

    fn clamp(&self, p: &mut [f64]) {
        for k in 0..p.len() {
            p[k] = p[k].clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Central-difference Jacobian `∂fᵢ/∂pⱼ`.
pub fn finite_difference_jacobian(
    model: &ModelFn<'_>,
    p: &[f64],
    scales: &[f64],
) -> Result<DMatrix<f64>> {
    let mut cols = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(scales[j]);
        let mut plus = p.to_vec();
        let mut minus = p.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = model(&plus)?;
        let fm = model(&minus)?;
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    let n = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(n, p.len(), |i, j| cols[j][i]))
}

fn chi2(y: &[f64], w: &[f64], f: &[f64]) -> Result<f64> {
    if f.len() != y.len() {
        return Err(Error::numerical(format!(
            "model returned {} values for {} data points",
            f.len(),
            y.len()
        )));
    }
    let c: f64 = y
        .iter()
        .zip(f)
        .zip(w)
        .map(|((y, f), w)| w * (y - f).powi(2))
        .sum();
    if !c.is_finite() {
        return Err(Error::numerical("model produced non-finite values"));
    }
    Ok(c)
}

/// `(JᵀWJ, JᵀW r)` for residuals `r = y − f`.
fn normal_equations(
    j: &DMatrix<f64>,
    w: &[f64],
    y: &[f64],
    f: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = j.ncols();
    let mut a = DMatrix::zeros(p, p);
    let mut g = DVector::zeros(p);
    for i in 0..j.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        let r = y[i] - f[i];
        for k in 0..p {
            let jk = j[(i, k)] * w[i];
            g[k] += jk * r;
            for l in 0..=k {
                a[(k, l)] += jk * j[(i, l)];
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            a[(l, k)] = a[(k, l)];
        }
    }
    (a, g)
}

/// Levenberg–Marquardt with Marquardt's diagonal scaling. Bounds are
/// enforced by projecting every trial point onto the box.
pub fn solve(
    problem: &Problem<'_>,
    model: &ModelFn<'_>,
    jacobian: Option<&JacobianFn<'_>>,
    opts: LmOptions,
) -> Result<FitResult> {
    problem.validate()?;
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        match jacobian {
            Some(f) => f(p),
            None => finite_difference_jacobian(model, p, &problem.scales),
        }
    };
    let (y, w) = (problem.y, problem.weights);
    let np = problem.p0.len();
    let mut p = problem.p0.clone();
    problem.clamp(&mut p);
    let mut f = model(&p)?;
    let mut c = chi2(y, w, &f)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut n_iter = 0;

    'outer: while n_iter < opts.max_iter.max(1) {
        n_iter += 1;
        if c == 0.0 {
            converged = true;
            break;
        }
        let j = jac(&p)?;
        let (a, g) = normal_equations(&j, w, y, &f);
        // Equilibrate so Marquardt damping acts uniformly on badly scaled
        // parameters; columns with no sensitivity get unit damping.
        let d: Vec<f64> = (0..np)
            .map(|k| {
                if a[(k, k)] > 0.0 {
                    1.0 / a[(k, k)].sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let scaled = DMatrix::from_fn(np, np, |r, s| a[(r, s)] * d[r] * d[s]);
        let gs = DVector::from_fn(np, |r, _| g[r] * d[r]);
        loop {
            let mut m = scaled.clone();
            for k in 0..np {
                m[(k, k)] += lambda;
            }
            let step = m.cholesky().map(|ch| {
                let z = ch.solve(&gs);
                DVector::from_fn(np, |r, _| z[r] * d[r])
            });
            if let Some(delta) = step {
                let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                problem.clamp(&mut trial);
                let f_trial = model(&trial)?;
                let c_trial = chi2(y, w, &f_trial)?;
                if c_trial < c {
                    // Damped steps are short by construction; only a nearly
                    // Gauss–Newton step can certify the optimum.
                    let undamped = lambda <= 1e-8;
                    let small_step = (0..np).all(|k| {
                        (trial[k] - p[k]).abs() <= opts.xtol * (p[k].abs() + problem.scales[k])
                    });
                    let small_gain = (c - c_trial) <= opts.ftol * c;
                    p = trial;
                    f = f_trial;
                    c = c_trial;
                    lambda = (lambda / 10.0).max(1e-15);
                    if undamped && (small_step || small_gain) {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
                // At the optimum χ² stops resolving the last Gauss–Newton
                // correction; take it rather than inflating λ.
                if lambda <= 1e-6 && c_trial <= c * (1.0 + 1e-14) {
                    if let Some(ch) = scaled.clone().cholesky() {
                        let z = ch.solve(&gs);
                        let mut polished: Vec<f64> = (0..np).map(|k| p[k] + z[k] * d[k]).collect();
                        problem.clamp(&mut polished);
                        let f_pol = model(&polished)?;
                        let c_pol = chi2(y, w, &f_pol)?;
                        if c_pol <= c * (1.0 + 1e-14) {
                            p = polished;
                            f = f_pol;
                            c = c_pol;
                        }
                    }
                    converged = true;
                    break 'outer;
                }
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // No downhill step exists at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    let mut warnings = Vec::new();
    let j = jac(&p)?;
    let (a, _) = normal_equations(&j, w, y, &f);
    let (cov_unit, rank_deficient) = scaled_inverse(&a);
    if rank_deficient {
        warnings.push("rank-deficient Jacobian: some parameters are not identifiable".into());
    }
    let n_eff = w.iter().filter(|&&x| x > 0.0).count();
    let dof = n_eff.saturating_sub(np);
    let reduced = if dof > 0 { c / dof as f64 } else { 0.0 };
    let factor = if dof > 0 { reduced } else { 1.0 };
    let cov = cov_unit * factor;
    let sigmas = (0..np).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    if !converged {
        warnings.push(format!("no convergence after {n_iter} iterations"));
    }
    Ok(FitResult {
        names: problem.names.clone(),
        params: p,
        sigmas,
        covariance: (0..np)
            .map(|r| (0..np).map(|s| cov[(r, s)]).collect())
            .collect(),
        residual_norm: c.sqrt(),
        chi2: c,
        dof,
        reduced_chi2: reduced,
        n_iter,
        converged,
        warnings,
        fixed: Vec::new(),
    })
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix after
/// equilibrating its diagonal; flags numerical rank deficiency.
fn scaled_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    let d: Vec<f64> = (0..n)
        .map(|k| {
            if a[(k, k)] > 0.0 {
                1.0 / a[(k, k)].sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax;
    let mut deficient = d.contains(&0.0);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let s = svd.singular_values[k];
        if s > cutoff {
            inv += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        } else {
            deficient = true;
        }
    }
    (
        DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j]),
        deficient,
    )
}

/// Fits a pointwise model `f(x, p)` with optional weights (default 1) and
/// bounds; parameters are named `p0, p1, …`.
pub fn fit_curve(
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    model: &dyn Fn(f64, &[f64]) -> f64,
    p0: &[f64],
    bounds: Option<(&[f64], &[f64])>,
) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::argument(format!(
            "x has {} points but y has {}",
            x.len(),
            y.len()
        )));
    }
    let unit = vec![1.0; y.len()];
    let w = weights.unwrap_or(&unit);
    let names: Vec<String> = (0..p0.len()).map(|k| format!("p{k}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut problem = Problem::new(&refs, p0, y, w);
    if let Some((lo, hi)) = bounds {
        problem = problem.with_bounds(lo, hi);
    }
    let f = |p: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().map(|&xi| model(xi, p)).collect()) };
    solve(&problem, &f, None, LmOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_recovered() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&t| 3.0 * (-1.7 * t).exp() + 0.2).collect();
        let r = fit_curve(
            &x,
            &y,
            None,
            &|t, p| p[0] * (-p[1] * t).exp() + p[2],
            &[1.0, 1.0, 0.0],
            None,
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 3.0).abs() < 1e-8);
        assert!((r.params[1] - 1.7).abs() < 1e-8);
        assert!((r.params[2] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn linear_matches_closed_form() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&t| 2.0 * t - 1.0 + if (t as i64) % 2 == 0 { 0.3 } else { -0.25 })
            .collect();
        let r = fit_curve(&x, &y, None, &|t, p| p[0] * t + p[1], &[0.0, 0.0], None).unwrap();
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx = x.iter().map(|a| a * a).sum::<f64>();
        let sxy = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let icpt = (sy - slope * sx) / n;
        assert!(
            (r.params[0] - slope).abs() < 1e-10,
            "{:?} {slope} {icpt}",
            r
        );
        assert!((r.params[1] - icpt).abs() < 1e-10);
        // Textbook standard error of the slope.
        let resid: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - slope * a - icpt).powi(2))
            .sum();
        let se = (resid / (n - 2.0) / (sxx - sx * sx / n)).sqrt();
        assert!((r.sigmas[0] - se).abs() < 1e-10 * se.max(1.0));
    }

    #[test]
    fn bounds_are_respected() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| 5.0 * t).collect();
        let r = fit_curve(
            &x,
            &y,
            None,
            &|t, p| p[0] * t,
            &[1.0],
            Some((&[0.0], &[2.0])),
        )
        .unwrap();
        assert_eq!(r.params[0], 2.0);
    }

    #[test]
    fn start_outside_bounds_is_an_error() {
        let x = [0.0, 1.0];
        assert!(fit_curve(
            &x,
            &x,
            None,
            &|t, p| p[0] * t,
            &[3.0],
            Some((&[0.0], &[2.0]))
        )
        .is_err());
    }

    #[test]
    fn unidentifiable_parameters_warn() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| 2.0 * t).collect();
        let r = fit_curve(&x, &y, None, &|t, p| (p[0] + p[1]) * t, &[1.0, 0.5], None).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("rank-deficient")));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|&t| (3.0 * t).sin()).collect();
        let unit = vec![1.0; y.len()];
        let problem = Problem::new(&["k"], &[1.0], &y, &unit);
        let f =
            |p: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().map(|&t| (p[0] * t).sin()).collect()) };
        let r = solve(
            &problem,
            &f,
            None,
            LmOptions {
                max_iter: 1,
                ..LmOptions::default()
            },
        )
        .unwrap();
        assert!(!r.converged);
    }
}
