//! Exact single-output Gaussian-process regression.
//!
//! The kernel is the squared exponential with one length scale per input
//! dimension. Hyperparameters (signal variance, length scales, noise
//! variance) are fitted on a log scale by maximizing the log marginal
//! likelihood from several seeded starting points.
//!
//! Only a single output is modeled. Vector-valued discrepancies would be
//! handled by fitting one independent model per output and stacking the
//! predictions; that is not provided here.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter ladder tried, in order, when the covariance is not numerically
/// positive definite.
const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower bound applied to a fitted noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

const MODEL_HEADER: &str = "gpmpc-gp-model v1";

/// Squared-exponential covariance `σ²_f · exp(-½ Σ_j (x_j - y_j)² / ℓ_j²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    signal_variance: f64,
    length_scales: Vec<f64>,
}

impl Kernel {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::Input(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        if length_scales.is_empty() {
            return Err(Error::Input("kernel needs at least one length scale".into()));
        }
        if let Some(bad) = length_scales
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::Input(format!(
                "length scales must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            signal_variance,
            length_scales,
        })
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Covariance between two input points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Input(format!(
                "input has dimension {}, kernel expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(y)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// Training inputs (one row per point) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Input("dataset needs at least one point".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(Error::Input("input points must have dimension ≥ 1".into()));
        }
        let mut flat = Vec::with_capacity(dim * inputs.len());
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Input(format!(
                    "point {i} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            flat.extend_from_slice(x);
        }
        let ds = Self {
            dim,
            inputs: flat,
            targets,
        };
        if ds.inputs.iter().chain(&ds.targets).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite entries".into()));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs
            .chunks_exact(self.dim)
            .zip(self.targets.iter().copied())
    }

    fn from_indices(&self, idx: impl Iterator<Item = usize>) -> Self {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in idx {
            inputs.extend_from_slice(self.input(i));
            targets.push(self.targets[i]);
        }
        Self {
            dim: self.dim,
            inputs,
            targets,
        }
    }

    /// Keeps points `0, every, 2·every, …`.
    pub fn subsample(&self, every: usize) -> Self {
        self.from_indices((0..self.len()).step_by(every.max(1)))
    }

    /// Picks at most `max_points` evenly spaced points, always keeping the
    /// first and the last.
    pub fn thin_evenly(&self, max_points: usize) -> Self {
        let m = self.len();
        if max_points == 0 || m <= max_points {
            return self.clone();
        }
        if max_points == 1 {
            return self.from_indices(std::iter::once(0));
        }
        let span = (m - 1) as f64;
        let last = (max_points - 1) as f64;
        self.from_indices((0..max_points).map(|k| ((k as f64) * span / last).round() as usize))
    }

    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("nothing to concatenate".into()))?;
        let mut out = Self {
            dim: first.dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        };
        for p in parts {
            if p.dim != out.dim {
                return Err(Error::Input("datasets have different input dimensions".into()));
            }
            out.inputs.extend_from_slice(&p.inputs);
            out.targets.extend_from_slice(&p.targets);
        }
        Ok(out)
    }

    fn all_inputs_identical(&self) -> bool {
        let first = self.input(0);
        (1..self.len()).all(|i| self.input(i) == first)
    }
}

/// A trained GP: hyperparameters, data, and the cached factorization of
/// `K + (σ² + jitter) I`.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Kernel,
    noise_variance: f64,
    dataset: Dataset,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `dataset`.
    pub fn new(kernel: Kernel, noise_variance: f64, dataset: Dataset) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::Input(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        if kernel.dim() != dataset.dim() {
            return Err(Error::Input(format!(
                "kernel has {} length scales but data has dimension {}",
                kernel.dim(),
                dataset.dim()
            )));
        }
        let gram = gram_matrix(&kernel, &dataset);
        let m = dataset.len();
        for &jitter in &JITTER_LADDER {
            let mut cov = gram.clone();
            for i in 0..m {
                cov[(i, i)] += noise_variance + jitter;
            }
            if let Some(chol) = Cholesky::new(cov) {
                let y = DVector::from_column_slice(dataset.targets());
                let alpha = chol.solve(&y);
                if alpha.iter().all(|a| a.is_finite()) {
                    return Ok(Self {
                        kernel,
                        noise_variance,
                        dataset,
                        jitter,
                        chol,
                        alpha,
                    });
                }
            }
        }
        Err(Error::Numerical(format!(
            "covariance not positive definite even with jitter {:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Cached `(K + σ²I)⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        self.kernel.check_dim(query)?;
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("query {query:?} is not finite")));
        }
        Ok(())
    }

    fn cross_covariance(&self, query: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dataset.len(),
            (0..self.dataset.len()).map(|i| self.kernel.eval_unchecked(query, self.dataset.input(i))),
        )
    }

    /// Posterior mean and (latent, noise-free) variance at `query`.
    pub fn predict(&self, query: &[f64]) -> Result<(f64, f64)> {
        self.check_query(query)?;
        let k_q = self.cross_covariance(query);
        let mean = k_q.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_q)
            .ok_or_else(|| Error::Numerical("singular cholesky factor".into()))?;
        let variance = (self.kernel.signal_variance - v.norm_squared()).max(0.0);
        Ok((mean, variance))
    }

    pub fn predict_mean(&self, query: &[f64]) -> Result<f64> {
        self.check_query(query)?;
        Ok(self.cross_covariance(query).dot(&self.alpha))
    }

    /// Gradient of the posterior mean with respect to the query point.
    pub fn mean_gradient(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let ls = self.kernel.length_scales();
        let mut grad = vec![0.0; ls.len()];
        for (i, (x, _)) in self.dataset.iter().enumerate() {
            let w = self.alpha[i] * self.kernel.eval_unchecked(query, x);
            for (j, g) in grad.iter_mut().enumerate() {
                *g -= w * (query[j] - x[j]) / (ls[j] * ls[j]);
            }
        }
        Ok(grad)
    }

    /// `-½ yᵀα - Σ ln L_ii - (m/2) ln 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(self.dataset.targets());
        let m = self.dataset.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det_half - 0.5 * m * LN_2PI
    }

    /// Log hyperparameters `[ln σ²_f, ln ℓ_1, …, ln ℓ_d, ln σ²]`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.kernel.dim() + 2);
        p.push(self.kernel.signal_variance.ln());
        p.extend(self.kernel.length_scales.iter().map(|l| l.ln()));
        p.push(self.noise_variance.ln());
        p
    }

    /// Gradient of the log marginal likelihood with respect to
    /// [`log_params`](Self::log_params).
    pub fn log_marginal_likelihood_gradient(&self) -> Vec<f64> {
        let m = self.dataset.len();
        let d = self.kernel.dim();
        let k_inv = self.chol.inverse();
        let mut grad = vec![0.0; d + 2];
        let ls = self.kernel.length_scales();
        for i in 0..m {
            for j in 0..m {
                let w = self.alpha[i] * self.alpha[j] - k_inv[(i, j)];
                let kf = self
                    .kernel
                    .eval_unchecked(self.dataset.input(i), self.dataset.input(j));
                grad[0] += w * kf;
                let (xi, xj) = (self.dataset.input(i), self.dataset.input(j));
                for dim in 0..d {
                    let r = (xi[dim] - xj[dim]) / ls[dim];
                    grad[1 + dim] += w * kf * r * r;
                }
            }
            grad[d + 1] += (self.alpha[i] * self.alpha[i] - k_inv[(i, i)]) * self.noise_variance;
        }
        grad.iter_mut().for_each(|g| *g *= 0.5);
        grad
    }

    /// Rebuilds a model on the same data from log hyperparameters.
    pub fn from_log_params(dataset: Dataset, params: &[f64]) -> Result<Self> {
        let d = dataset.dim();
        if params.len() != d + 2 {
            return Err(Error::Input(format!(
                "expected {} log parameters, got {}",
                d + 2,
                params.len()
            )));
        }
        let kernel = Kernel::new(params[0].exp(), params[1..=d].iter().map(|p| p.exp()).collect())?;
        GpModel::new(kernel, params[d + 1].exp(), dataset)
    }

    /// Self-describing text form: hyperparameters plus the training data,
    /// every number with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_HEADER}");
        let _ = writeln!(s, "input_dim {}", self.kernel.dim());
        let _ = writeln!(s, "signal_variance {}", fmt17(self.kernel.signal_variance));
        let ls: Vec<String> = self.kernel.length_scales.iter().map(|l| fmt17(*l)).collect();
        let _ = writeln!(s, "length_scales {}", ls.join(" "));
        let _ = writeln!(s, "noise_variance {}", fmt17(self.noise_variance));
        let _ = writeln!(s, "points {}", self.dataset.len());
        for (x, t) in self.dataset.iter() {
            let row: Vec<String> = x.iter().chain(std::iter::once(&t)).map(|v| fmt17(*v)).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                })
        };
        let (line, header) = next("header")?;
        if header != MODEL_HEADER {
            return Err(Error::Parse {
                line,
                message: format!("expected header `{MODEL_HEADER}`, found `{header}`"),
            });
        }
        let dim: usize = keyed(next("input_dim")?, "input_dim")?
            .parse()
            .map_err(|e| Error::Parse { line: line + 1, message: format!("input_dim: {e}") })?;
        let sv = parse_f64s(next("signal_variance")?, "signal_variance", 1)?[0];
        let ls = parse_f64s(next("length_scales")?, "length_scales", dim)?;
        let noise = parse_f64s(next("noise_variance")?, "noise_variance", 1)?[0];
        let (pline, pts) = next("points")?;
        let m: usize = keyed((pline, pts), "points")?
            .parse()
            .map_err(|e| Error::Parse { line: pline, message: format!("points: {e}") })?;
        let mut inputs = Vec::with_capacity(m);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let (line, row) = next("data row")?;
            let vals = row
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line, message: e.to_string() })?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} values, found {}", dim + 1, vals.len()),
                });
            }
            inputs.push(vals[..dim].to_vec());
            targets.push(vals[dim]);
        }
        GpModel::new(Kernel::new(sv, ls)?, noise, Dataset::new(inputs, targets)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn keyed<'a>((line, text): (usize, &'a str), key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .map(str::trim)
        .filter(|rest| !rest.is_empty())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `{key} <value>`, found `{text}`"),
        })
}

fn parse_f64s(entry: (usize, &str), key: &str, count: usize) -> Result<Vec<f64>> {
    let line = entry.0;
    let rest = keyed(entry, key)?;
    let vals = rest
        .split_whitespace()
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse { line, message: format!("{key}: {e}") })?;
    if vals.len() != count {
        return Err(Error::Parse {
            line,
            message: format!("{key}: expected {count} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

/// Decimal with 17 significant digits; parses back to the same `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn gram_matrix(kernel: &Kernel, dataset: &Dataset) -> DMatrix<f64> {
    let m = dataset.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = kernel.signal_variance;
        for j in 0..i {
            let v = kernel.eval_unchecked(dataset.input(i), dataset.input(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Settings for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Keep the noise variance at this value instead of optimizing it.
    pub fixed_noise: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            max_iterations: 200,
            fixed_noise: None,
        }
    }
}

// Box on the log parameters: [ln σ²_f, ln ℓ.., ln σ²].
const LN_SIGNAL_BOUNDS: (f64, f64) = (-18.420_680_743_952_367, 13.815_510_557_964_274); // 1e-8 .. 1e6
const LN_LENGTH_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 9.210_340_371_976_184); // 1e-3 .. 1e4
const LN_NOISE_UPPER: f64 = 9.210_340_371_976_184; // 1e4

/// Fits hyperparameters by maximizing the log marginal likelihood.
///
/// Each restart draws its starting point log-uniformly from `[1e-2, 1e2]`
/// for every hyperparameter, then runs a projected quasi-Newton ascent with
/// backtracking on the log parameters. The model with the highest
/// likelihood wins; ties go to the earlier restart.
pub fn fit(dataset: &Dataset, options: &FitOptions) -> Result<GpModel> {
    if dataset.len() < 2 {
        return Err(Error::Input(format!(
            "fitting needs at least 2 points, got {}",
            dataset.len()
        )));
    }
    if options.restarts == 0 {
        return Err(Error::Input("restarts must be ≥ 1".into()));
    }
    if let Some(noise) = options.fixed_noise {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::Input(format!("fixed noise must be ≥ 0, got {noise}")));
        }
        if noise == 0.0 && dataset.all_inputs_identical() {
            return Err(Error::Fit(
                "degenerate dataset: all inputs are identical and the noise is fixed at 0, \
                 so the covariance is singular"
                    .into(),
            ));
        }
    }

    let d = dataset.dim();
    let mut lower = vec![LN_SIGNAL_BOUNDS.0];
    let mut upper = vec![LN_SIGNAL_BOUNDS.1];
    lower.extend(std::iter::repeat_n(LN_LENGTH_BOUNDS.0, d));
    upper.extend(std::iter::repeat_n(LN_LENGTH_BOUNDS.1, d));
    lower.push(NOISE_FLOOR.ln());
    upper.push(LN_NOISE_UPPER);
    let objective = Objective {
        dataset,
        fixed_noise: options.fixed_noise,
        lower,
        upper,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (lo, hi) = (1e-2f64.ln(), 1e2f64.ln());
    let mut best: Option<(f64, GpModel)> = None;
    let mut last_err = None;
    for _ in 0..options.restarts {
        let start: Vec<f64> = (0..d + 2).map(|_| rng.random_range(lo..hi)).collect();
        match objective.maximize(start, options.max_iterations) {
            Ok((lml, model)) => {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, model));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| {
        Error::Fit(format!(
            "no restart produced a valid model ({})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })
}

struct Objective<'a> {
    dataset: &'a Dataset,
    fixed_noise: Option<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Objective<'_> {
    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
        if let Some(noise) = self.fixed_noise {
            *x.last_mut().unwrap() = noise.max(f64::MIN_POSITIVE).ln();
        }
    }

    /// Negative likelihood and its gradient (minimization form).
    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>, GpModel)> {
        let mut params = x.to_vec();
        if self.fixed_noise == Some(0.0) {
            // ln 0 is not representable; rebuild with an exact zero.
            let d = self.dataset.dim();
            let kernel = Kernel::new(x[0].exp(), x[1..=d].iter().map(|p| p.exp()).collect()).ok()?;
            let model = GpModel::new(kernel, 0.0, self.dataset.clone()).ok()?;
            let mut g = model.log_marginal_likelihood_gradient();
            g.iter_mut().for_each(|v| *v = -*v);
            *g.last_mut().unwrap() = 0.0;
            let f = -model.log_marginal_likelihood();
            return f.is_finite().then_some((f, g, model));
        }
        self.project(&mut params);
        let model = GpModel::from_log_params(self.dataset.clone(), &params).ok()?;
        let f = -model.log_marginal_likelihood();
        if !f.is_finite() {
            return None;
        }
        let mut g: Vec<f64> = model
            .log_marginal_likelihood_gradient()
            .into_iter()
            .map(|v| -v)
            .collect();
        if self.fixed_noise.is_some() {
            *g.last_mut().unwrap() = 0.0;
        }
        Some((f, g, model))
    }

    /// Gradient of the box-projected problem: components pushing against an
    /// active bound are zeroed.
    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((xi, gi), (lo, hi))| {
                if (*xi <= *lo && *gi > 0.0) || (*xi >= *hi && *gi < 0.0) {
                    0.0
                } else {
                    *gi
                }
            })
            .collect()
    }

    fn maximize(&self, start: Vec<f64>, max_iterations: usize) -> Result<(f64, GpModel)> {
        let n = start.len();
        let mut x = start;
        self.project(&mut x);
        let (mut f, mut g, mut model) = self
            .eval(&x)
            .ok_or_else(|| Error::Numerical("invalid starting hyperparameters".into()))?;
        // Inverse Hessian approximation of the negative likelihood.
        let mut h = DMatrix::<f64>::identity(n, n);
        let mut stalls = 0;
        for _ in 0..max_iterations {
            let pg = self.projected_gradient(&x, &g);
            if pg.iter().all(|v| v.abs() < 1e-6) {
                break;
            }
            let gv = DVector::from_column_slice(&pg);
            let mut dir = -(&h * &gv);
            if dir.dot(&gv) >= 0.0 {
                h.fill_with_identity();
                dir = -gv.clone();
            }
            let max_step = dir.amax();
            if max_step > 2.0 {
                dir *= 2.0 / max_step;
            }
            let slope = dir.dot(&gv);
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-10 {
                let mut trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
                self.project(&mut trial);
                if let Some((ft, gt, mt)) = self.eval(&trial) {
                    if ft <= f + 1e-4 * t * slope {
                        accepted = Some((trial, ft, gt, mt));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((xn, fnew, gn, mn)) = accepted else {
                if h == DMatrix::identity(n, n) {
                    break;
                }
                h.fill_with_identity();
                continue;
            };
            let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
            let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
            let sy = s.dot(&y);
            if sy > 1e-12 {
                let rho = 1.0 / sy;
                let hy = &h * &y;
                let yhy = y.dot(&hy);
                h += ((1.0 + rho * yhy) * rho) * (&s * s.transpose())
                    - rho * (&hy * s.transpose() + &s * hy.transpose());
            }
            let improvement = f - fnew;
            x = xn;
            f = fnew;
            g = gn;
            model = mn;
            if improvement < 1e-10 * (1.0 + f.abs()) {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        Ok((-f, model))
    }
}

/// Draws `count` seeded log-uniform samples in `[lo, hi]`; used by tests and
/// the data generator to produce reproducible hyperparameter grids.
pub fn log_uniform_samples(seed: u64, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| rng.random_range(lo.ln()..hi.ln()).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_dataset() -> Dataset {
        Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 2.0], vec![2.0, -1.0]],
            vec![0.3, -0.2, 0.8, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn kernel_identical_inputs_give_signal_variance() {
        let k = Kernel::new(1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        let k = Kernel::new(3.7, vec![0.2, 9.0]).unwrap();
        assert_eq!(k.eval(&[4.0, -1.0], &[4.0, -1.0]).unwrap(), 3.7);
    }

    #[test]
    fn kernel_closed_form_value() {
        let k = Kernel::new(2.0, vec![1.0, 1.0]).unwrap();
        // 2·exp(-0.5), evaluated independently
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            1.213_061_319_425_267,
            max_relative = 1e-14
        );
    }

    #[test]
    fn kernel_dimension_mismatch_is_input_error() {
        let k = Kernel::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Input(_))));
        assert!(matches!(Kernel::new(0.0, vec![1.0]), Err(Error::Input(_))));
        assert!(matches!(Kernel::new(1.0, vec![-1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![0.0, 1.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![0.0, 1.0], vec![0.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN, 1.0]], vec![1.0]).is_err());
    }

    #[test]
    fn subsample_and_thin() {
        let inputs: Vec<Vec<f64>> = (0..595).map(|i| vec![i as f64, 0.0]).collect();
        let ds = Dataset::new(inputs, vec![0.0; 595]).unwrap();
        assert_eq!(ds.subsample(5).len(), 119);
        let thin = ds.thin_evenly(100);
        assert_eq!(thin.len(), 100);
        assert_eq!(thin.input(0)[0], 0.0);
        assert_eq!(thin.input(99)[0], 594.0);
    }

    #[test]
    fn single_point_likelihood() {
        let ds = Dataset::new(vec![vec![0.0, 0.0]], vec![0.0]).unwrap();
        let m = GpModel::new(Kernel::new(1.0, vec![1.0, 1.0]).unwrap(), 1.0, ds).unwrap();
        // log N(0; 0, 2)
        let expected = -0.5 * 2f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(m.log_marginal_likelihood(), expected, max_relative = 1e-14);
        assert_relative_eq!(m.log_marginal_likelihood(), -1.2655, epsilon = 5e-5);
    }

    #[test]
    fn noise_free_interpolation() {
        let ds = toy_dataset();
        let m = GpModel::new(Kernel::new(1.0, vec![1.0, 1.0]).unwrap(), 0.0, ds.clone()).unwrap();
        for (x, t) in ds.iter() {
            let (mean, var) = m.predict(x).unwrap();
            assert!((mean - t).abs() < 1e-8, "{mean} vs {t}");
            assert!(var <= 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let m = GpModel::new(Kernel::new(1.5, vec![1.0, 1.0]).unwrap(), 0.01, toy_dataset()).unwrap();
        let (mean, var) = m.predict(&[40.0, -40.0]).unwrap();
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.5).abs() < 1e-6);
    }

    #[test]
    fn predict_rejects_bad_queries() {
        let m = GpModel::new(Kernel::new(1.0, vec![1.0, 1.0]).unwrap(), 0.01, toy_dataset()).unwrap();
        assert!(m.predict(&[0.0]).is_err());
        assert!(m.predict(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn degenerate_dataset_with_zero_noise() {
        let ds = Dataset::new(vec![vec![1.0, 1.0]; 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let opts = FitOptions {
            fixed_noise: Some(0.0),
            ..FitOptions::default()
        };
        match fit(&ds, &opts) {
            Err(Error::Fit(msg)) => assert!(msg.contains("identical")),
            other => panic!("expected fit error, got {other:?}"),
        }
    }

    #[test]
    fn fit_needs_two_points_and_a_restart() {
        let one = Dataset::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(fit(&one, &FitOptions::default()), Err(Error::Input(_))));
        let opts = FitOptions {
            restarts: 0,
            ..FitOptions::default()
        };
        assert!(matches!(fit(&toy_dataset(), &opts), Err(Error::Input(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = GpModel::new(
            Kernel::new(0.123_456_789_012_345_67, vec![1.0 / 3.0, 7.0]).unwrap(),
            1e-3 / 7.0,
            toy_dataset(),
        )
        .unwrap();
        let back = GpModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.kernel(), m.kernel());
        assert_eq!(back.noise_variance(), m.noise_variance());
        assert_eq!(back.dataset(), m.dataset());
        assert_eq!(back.predict(&[0.3, 0.4]).unwrap(), m.predict(&[0.3, 0.4]).unwrap());
    }

    #[test]
    fn from_text_reports_bad_header() {
        let err = GpModel::from_text("not a model\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
