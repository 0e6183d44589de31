//! The two-layer ReLU network.
//!
//! f_W(x) = (1/sqrt m) sum_j a_j phi(w_j . x) with phi(z) = max{0, z} and
//! frozen output signs a_j in {-1, +1}. The derivative convention is the
//! left-continuous phi'(z) = 1{z > 0}, so phi'(0) = 0 exactly.
//!
//! Antisymmetric initialization duplicates each Gaussian neuron with a
//! flipped output sign, which makes the initial network identically zero
//! without changing the induced kernel.

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Left-continuous ReLU derivative: exactly zero at the kink.
pub fn relu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Hidden weights plus frozen output signs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// m x d, row j is neuron w_j.
    pub w: Array2<f64>,
    /// Output signs as +-1.0; never mutated by training.
    pub signs: Array1<f64>,
}

impl NetworkState {
    /// Wrap explicit weights and signs. Requires even width and +-1 signs;
    /// the antisymmetric pairing itself is a property of
    /// [`init_antisymmetric`], not of every state.
    pub fn new(w: Array2<f64>, signs: Array1<f64>) -> Result<Self> {
        let m = w.nrows();
        if m < 2 || m % 2 != 0 {
            return Err(Error::InvalidWidth(m));
        }
        if signs.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: signs.len() });
        }
        if signs.iter().any(|a| *a != 1.0 && *a != -1.0) {
            return Err(Error::InvalidConfig("output signs must be +-1".into()));
        }
        Ok(Self { w, signs })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: len });
        }
        Ok(())
    }

    /// Pre-activations W x for a batch of rows, n x m.
    pub fn preactivations(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(x.dot(&self.w.t()))
    }

    /// Network output at a single point.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_input(x.len())?;
        debug_assert!((x.dot(&x).sqrt() - 1.0).abs() < 1e-9, "inputs live on the sphere");
        let z = self.w.dot(&x);
        let scale = (self.m() as f64).sqrt().recip();
        Ok(scale * z.iter().zip(self.signs.iter()).map(|(z, a)| a * relu(*z)).sum::<f64>())
    }

    /// Network outputs for a batch of rows.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let z = self.preactivations(x)?;
        let scale = (self.m() as f64).sqrt().recip();
        let a = &self.signs * scale;
        Ok(z.mapv(relu).dot(&a))
    }

    /// Gradient feature map G_W(x) = (1/sqrt m)(a ⊙ phi'(Wx)) x^T, m x d.
    pub fn gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.len())?;
        let z = self.w.dot(&x);
        let scale = (self.m() as f64).sqrt().recip();
        let mut out = Array2::zeros((self.m(), self.d()));
        for (j, mut row) in out.rows_mut().into_iter().enumerate() {
            let c = scale * self.signs[j] * relu_prime(z[j]);
            if c != 0.0 {
                row.assign(&(&x * c));
            }
        }
        Ok(out)
    }

    /// Sum of weighted gradient feature maps, sum_i c_i G_W(x_i), m x d.
    /// This is the building block of every flow step.
    pub fn weighted_gradient_sum(
        &self,
        x: ArrayView2<'_, f64>,
        c: ArrayView1<'_, f64>,
    ) -> Result<Array2<f64>> {
        if c.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: c.len() });
        }
        let z = self.preactivations(x)?; // n x m
        let s = z.mapv(relu_prime);
        let sc = &s * &c.insert_axis(Axis(1)); // row i scaled by c_i
        let mut out = sc.t().dot(&x); // m x d
        let scale = (self.m() as f64).sqrt().recip();
        for (j, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * scale * self.signs[j]);
        }
        Ok(out)
    }
}

/// Antisymmetric initialization: the first m/2 neurons are standard
/// Gaussians with Unif{+-1} signs, the second half mirrors the weights with
/// flipped signs, so f_{W(0)} vanishes identically.
pub fn init_antisymmetric(m: usize, d: usize, seed: u64) -> Result<NetworkState> {
    let mut rng = rng::stream("relu_net.init", seed);
    init_antisymmetric_stream(m, d, &mut rng)
}

/// Same, drawing from an existing stream.
pub fn init_antisymmetric_stream(m: usize, d: usize, rng: &mut Stream) -> Result<NetworkState> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidWidth(m));
    }
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let half = m / 2;
    let mut w = Array2::zeros((m, d));
    for j in 0..half {
        for k in 0..d {
            w[[j, k]] = StandardNormal.sample(rng);
        }
    }
    for j in 0..half {
        for k in 0..d {
            w[[half + j, k]] = w[[j, k]];
        }
    }
    let mut signs = Array1::zeros(m);
    for j in 0..half {
        let a = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        signs[j] = a;
        signs[half + j] = -a;
    }
    NetworkState::new(w, signs)
}

/// Gradient matrix G_W in R^{md x n}: column i is the row-major
/// vectorization of G_W(x_i), assembled as the Khatri-Rao product of the
/// pre-gradient matrix with X^T so that G^T G equals the NTK Gram matrix.
#[derive(Debug, Clone)]
pub struct GradientMatrix {
    pub g: Array2<f64>,
    pub m: usize,
    pub d: usize,
}

impl GradientMatrix {
    pub fn n(&self) -> usize {
        self.g.ncols()
    }
}

/// Assemble the md x n gradient matrix for the sample X.
pub fn gradient_matrix(state: &NetworkState, x: ArrayView2<'_, f64>) -> Result<GradientMatrix> {
    let (m, d) = (state.m(), state.d());
    let n = x.nrows();
    let z = state.preactivations(x)?; // n x m
    let scale = (m as f64).sqrt().recip();
    let mut g = Array2::zeros((m * d, n));
    for i in 0..n {
        for j in 0..m {
            let c = scale * state.signs[j] * relu_prime(z[[i, j]]);
            if c != 0.0 {
                for k in 0..d {
                    g[[d * j + k, i]] = c * x[[i, k]];
                }
            }
        }
    }
    Ok(GradientMatrix { g, m, d })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"NTKW";
const CHECKPOINT_VERSION: u32 = 1;

/// Provenance recorded next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: usize,
}

/// Binary checkpoint: magic, version, m, d, row-major weights, one byte per
/// sign; the metadata goes to a JSON sidecar at `<path>.json`.
pub fn write_checkpoint(path: &Path, state: &NetworkState, meta: &CheckpointMeta) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + state.m() * state.d() * 8 + state.m());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(state.m() as u64).to_le_bytes());
    buf.extend_from_slice(&(state.d() as u64).to_le_bytes());
    for v in state.w.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for a in state.signs.iter() {
        buf.push(if *a > 0.0 { 0x01 } else { 0xff });
    }
    std::fs::write(path, &buf)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn read_checkpoint(path: &Path) -> Result<(NetworkState, CheckpointMeta)> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 24];
    f.read_exact(&mut header)?;
    if &header[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let m = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut wbytes = vec![0u8; m * d * 8];
    f.read_exact(&mut wbytes)?;
    let mut w = Array2::zeros((m, d));
    for (idx, chunk) in wbytes.chunks_exact(8).enumerate() {
        w[[idx / d, idx % d]] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    let mut sbytes = vec![0u8; m];
    f.read_exact(&mut sbytes)?;
    let signs = Array1::from_iter(
        sbytes.iter().map(|b| if *b == 0x01 { 1.0 } else { -1.0 }),
    );
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((NetworkState::new(w, signs)?, meta))
}
