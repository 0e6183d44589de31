//! Training data on the unit sphere.
//!
//! Inputs are uniform on S^{d-1}, labels are `f*(x) + noise` with
//! `sup|f*| + noise half-width <= 1`, so the unit label bound holds almost
//! surely. Sphere sampling normalizes d independent standard Gaussians,
//! which is exactly uniform.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Stream};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Tolerance on row norms; rows are normalized by construction, so this only
/// guards against corrupted input.
pub const ROW_NORM_TOL: f64 = 1e-12;

/// Feature matrix, labels and the noise that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n x d, every row unit Euclidean norm.
    pub x: Array2<f64>,
    /// Labels, |y_i| <= 1.
    pub y: Array1<f64>,
    /// Noise realizations, y_i = f*(x_i) + noise_i exactly.
    pub noise: Array1<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Check the container invariants (unit rows, label bound, additivity is
    /// structural). Intended for tests and after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n() || self.noise.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: self.y.len().min(self.noise.len()),
            });
        }
        for row in self.x.rows() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > ROW_NORM_TOL {
                return Err(Error::NonFinite("dataset row norm"));
            }
        }
        if self.y.iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return Err(Error::LabelBound(
                self.y.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
            ));
        }
        Ok(())
    }

    /// CSV with header `x_0,...,x_{d-1},y,xi_star`, floats at 17 significant
    /// digits so the round trip is exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.d();
        let mut header = String::new();
        for k in 0..d {
            header.push_str(&format!("x_{k},"));
        }
        header.push_str("y,xi_star");
        writeln!(w, "{header}")?;
        for i in 0..self.n() {
            let mut line = String::new();
            for k in 0..d {
                line.push_str(&format!("{:.16e},", self.x[[i, k]]));
            }
            line.push_str(&format!("{:.16e},{:.16e}", self.y[i], self.noise[i]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "y" || cols[cols.len() - 1] != "xi_star" {
            return Err(Error::Parse(format!("unexpected dataset header: {header}")));
        }
        let d = cols.len() - 2;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut noise = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() != d + 2 {
                return Err(Error::Parse(format!("row with {} fields", vals.len())));
            }
            xs.extend_from_slice(&vals[..d]);
            ys.push(vals[d]);
            noise.push(vals[d + 1]);
        }
        let n = ys.len();
        let x = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Dataset {
            x,
            y: Array1::from_vec(ys),
            noise: Array1::from_vec(noise),
        })
    }
}

/// Bounded regression function on the sphere.
#[derive(Clone)]
pub enum RegressionFunction {
    /// f*(x) = beta . x ; sup bound is exactly ||beta||_2.
    Linear { beta: Array1<f64> },
    /// f*(x) = c0 + beta . x + x' A x with A symmetric traceless; spans
    /// harmonic orders {0, 1, 2}.
    HarmonicCombo {
        c0: f64,
        beta: Array1<f64>,
        quad: Array2<f64>,
        sup_bound: f64,
    },
    /// Arbitrary evaluator with a caller-certified sup bound.
    Custom {
        eval: Arc<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>,
        sup_bound: f64,
    },
}

impl fmt::Debug for RegressionFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { beta } => f.debug_struct("Linear").field("d", &beta.len()).finish(),
            Self::HarmonicCombo { c0, beta, sup_bound, .. } => f
                .debug_struct("HarmonicCombo")
                .field("c0", c0)
                .field("d", &beta.len())
                .field("sup_bound", sup_bound)
                .finish(),
            Self::Custom { sup_bound, .. } => {
                f.debug_struct("Custom").field("sup_bound", sup_bound).finish()
            }
        }
    }
}

impl RegressionFunction {
    pub fn linear(beta: Array1<f64>) -> Self {
        Self::Linear { beta }
    }

    /// Zero function, represented as linear with beta = 0.
    pub fn zero(d: usize) -> Self {
        Self::Linear {
            beta: Array1::zeros(d),
        }
    }

    /// Degree <= 2 harmonic combination. The quadratic part is symmetrized
    /// and its trace folded into the constant, so the three stored pieces
    /// are pure orders 0, 1, 2.
    pub fn harmonic(c0: f64, beta: Array1<f64>, quad: Option<Array2<f64>>) -> Result<Self> {
        let d = beta.len();
        let mut a = match quad {
            Some(q) => {
                if q.nrows() != d || q.ncols() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: q.nrows() });
                }
                (&q + &q.t()) * 0.5
            }
            None => Array2::zeros((d, d)),
        };
        let trace = a.diag().sum();
        let c0 = c0 + trace / d as f64;
        for k in 0..d {
            a[[k, k]] -= trace / d as f64;
        }
        let quad_norm = linalg::spectral_norm_sym(a.view());
        let sup_bound = c0.abs() + beta.dot(&beta).sqrt() + quad_norm;
        Ok(Self::HarmonicCombo { c0, beta, quad: a, sup_bound })
    }

    pub fn custom(
        eval: impl Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static,
        sup_bound: f64,
    ) -> Self {
        Self::Custom { eval: Arc::new(eval), sup_bound }
    }

    /// Certified essential sup of |f*| on the sphere.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Self::Linear { beta } => beta.dot(beta).sqrt(),
            Self::HarmonicCombo { sup_bound, .. } => *sup_bound,
            Self::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            Self::Linear { beta } => beta.dot(&x),
            Self::HarmonicCombo { c0, beta, quad, .. } => {
                c0 + beta.dot(&x) + x.dot(&quad.dot(&x))
            }
            Self::Custom { eval, .. } => eval(x),
        }
    }

    pub fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            Self::Linear { beta } => x.dot(beta),
            Self::HarmonicCombo { c0, beta, quad, .. } => {
                let mut out = x.dot(beta);
                let xa = x.dot(quad);
                let q = (&xa * &x).sum_axis(Axis(1));
                out += &q;
                out += *c0;
                out
            }
            Self::Custom { eval, .. } => {
                Array1::from_iter(x.rows().into_iter().map(|r| eval(r)))
            }
        }
    }

    /// Exact squared L2(rho) norm where the harmonic structure makes it
    /// available: E[(c0 + b.x + x'Ax)^2] = c0^2 + ||b||^2/d + 2||A||_F^2/(d(d+2)).
    pub fn l2_norm_sq(&self) -> Option<f64> {
        match self {
            Self::Linear { beta } => {
                let d = beta.len() as f64;
                Some(beta.dot(beta) / d)
            }
            Self::HarmonicCombo { c0, beta, quad, .. } => {
                let d = beta.len() as f64;
                let fro2 = quad.iter().map(|v| v * v).sum::<f64>();
                Some(c0 * c0 + beta.dot(beta) / d + 2.0 * fro2 / (d * (d + 2.0)))
            }
            Self::Custom { .. } => None,
        }
    }

    /// Squared mass on each harmonic order (0, 1, 2) when known analytically.
    pub fn order_masses(&self) -> Option<[f64; 3]> {
        match self {
            Self::Linear { beta } => {
                let d = beta.len() as f64;
                Some([0.0, beta.dot(beta) / d, 0.0])
            }
            Self::HarmonicCombo { c0, beta, quad, .. } => {
                let d = beta.len() as f64;
                let fro2 = quad.iter().map(|v| v * v).sum::<f64>();
                Some([c0 * c0, beta.dot(beta) / d, 2.0 * fro2 / (d * (d + 2.0))])
            }
            Self::Custom { .. } => None,
        }
    }
}

/// Mean-zero noise bounded by its half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Uniform on [-b, b].
    Uniform { b: f64 },
    /// +-b with equal probability.
    TwoPoint { b: f64 },
}

impl NoiseModel {
    pub fn half_width(&self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Uniform { b } | Self::TwoPoint { b } => *b,
        }
    }

    fn sample(&self, n: usize, rng: &mut Stream) -> Array1<f64> {
        match self {
            Self::None => Array1::zeros(n),
            Self::Uniform { b } => {
                let dist = Uniform::new_inclusive(-*b, *b);
                Array1::from_iter((0..n).map(|_| dist.sample(rng)))
            }
            Self::TwoPoint { b } => {
                Array1::from_iter((0..n).map(|_| if rng.gen::<bool>() { *b } else { -*b }))
            }
        }
    }
}

/// One uniform point on S^{d-1}, written into `row`.
fn fill_sphere_row(row: &mut [f64], rng: &mut Stream) {
    loop {
        let mut sq = 0.0;
        for v in row.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v = g;
            sq += g * g;
        }
        if sq > 0.0 {
            let inv = sq.sqrt().recip();
            for v in row.iter_mut() {
                *v *= inv;
            }
            return;
        }
        // zero vector has probability 0; resample
    }
}

/// n i.i.d. uniform points on S^{d-1}, drawn from an existing stream.
pub fn sample_sphere_stream(d: usize, n: usize, rng: &mut Stream) -> Result<Array2<f64>> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        fill_sphere_row(row.as_slice_mut().expect("contiguous row"), rng);
    }
    Ok(x)
}

/// n i.i.d. uniform points on S^{d-1}; deterministic in the seed.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = rng::stream("sphere_data.sample", seed);
    sample_sphere_stream(d, n, &mut rng)
}

/// Draw a dataset: x uniform, y = f*(x) + noise. Fails up front when the
/// certified bounds cannot guarantee |y| <= 1.
pub fn make_dataset(
    f: &RegressionFunction,
    noise: &NoiseModel,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let budget = f.sup_bound() + noise.half_width();
    if budget > 1.0 + 1e-12 {
        return Err(Error::LabelBound(budget));
    }
    let mut x_rng = rng::stream("sphere_data.x", seed);
    let mut noise_rng = rng::stream("sphere_data.noise", seed);
    let x = sample_sphere_stream(d, n, &mut x_rng)?;
    let xi = noise.sample(n, &mut noise_rng);
    let y = &f.eval_batch(x.view()) + &xi;
    Ok(Dataset { x, y, noise: xi })
}

/// Largest singular value of the feature matrix.
pub fn data_spectral_norm(x: ArrayView2<'_, f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::InvalidConfig("empty feature matrix".into()));
    }
    linalg::spectral_norm_rect(x)
}
