//! Uniform periodic grids on the unit torus `[0,1)^d`, `d ∈ {1, 2}`.
//!
//! Samples are stored row-major with axis 0 contiguous: the flat index of
//! node `(i0, i1)` is `i0 + n * i1`. Fourier coefficients are normalized so
//! that `f(x) = Σ_k f̂(k) exp(2πi k·x)`, which makes `f̂(0)` the mean of `f`
//! and `Σ |f̂(k)|²` its squared L² norm on the torus.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("n must be a power of two >= 8, got {0}")]
    Resolution(usize),
    #[error("fields live on different grids")]
    Mismatch,
    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    Axis { axis: usize, dim: usize },
    #[error("derivative order must be 1 or 2, got {0}")]
    Order(u32),
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform tensor grid with `n` nodes per axis and cell width `1/n`.
#[derive(Clone)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    plans: Arc<Plans>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl Eq for PeriodicGrid {}

/// Builds a grid with nodes `x_j = j / n` along each of `dim` axes.
pub fn make_grid(dim: usize, n: usize) -> Result<PeriodicGrid, GridError> {
    if dim != 1 && dim != 2 {
        return Err(GridError::Dimension(dim));
    }
    if n < 8 || !n.is_power_of_two() {
        return Err(GridError::Resolution(n));
    }
    let mut planner = FftPlanner::new();
    let plans = Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    };
    Ok(PeriodicGrid {
        dim,
        n,
        plans: Arc::new(plans),
    })
}

impl PeriodicGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `dx^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Per-axis integer indices of a flat index.
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat % self.n, flat / self.n]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] + self.n * idx[1]
        }
    }

    /// Coordinates of a node; the unused second coordinate is 0 in 1D.
    pub fn node(&self, flat: usize) -> [f64; 2] {
        let [i0, i1] = self.multi_index(flat);
        [i0 as f64 * self.dx(), i1 as f64 * self.dx()]
    }

    /// Signed frequency of a per-axis index: `0..n/2-1` then `-n/2..-1`.
    pub fn wavenumber(&self, index: usize) -> i64 {
        let n = self.n as i64;
        let i = index as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Frequencies in storage order, `{0, 1, …, n/2-1, -n/2, …, -1}`.
    pub fn wavenumbers(&self) -> Vec<i64> {
        (0..self.n).map(|i| self.wavenumber(i)).collect()
    }

    /// Per-axis frequency vector of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [i64; 2] {
        let [i0, i1] = self.multi_index(flat);
        if self.dim == 1 {
            [self.wavenumber(i0), 0]
        } else {
            [self.wavenumber(i0), self.wavenumber(i1)]
        }
    }

    /// `|2πk|²` for a flat spectral index.
    pub fn angular_norm_sq(&self, flat: usize) -> f64 {
        let k = self.wavevector(flat);
        let a = 2.0 * PI * k[0] as f64;
        let b = 2.0 * PI * k[1] as f64;
        a * a + b * b
    }

    /// Largest retained frequency under the two-thirds rule: `3K < n`.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n as i64 - 1) / 3
    }

    fn is_nyquist(&self, k: i64) -> bool {
        k == -(self.n as i64) / 2
    }

    fn check_axis(&self, axis: usize) -> Result<(), GridError> {
        if axis < self.dim {
            Ok(())
        } else {
            Err(GridError::Axis {
                axis,
                dim: self.dim,
            })
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        fft.process(data);
        if self.dim == 2 {
            let mut column = vec![Complex64::new(0.0, 0.0); n];
            for i0 in 0..n {
                for (i1, c) in column.iter_mut().enumerate() {
                    *c = data[i0 + n * i1];
                }
                fft.process(&mut column);
                for (i1, c) in column.iter().enumerate() {
                    data[i0 + n * i1] = *c;
                }
            }
        }
    }

    /// Normalized forward transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.plans.forward);
        let scale = 1.0 / self.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        data
    }

    /// Inverse of [`forward`](Self::forward); returns the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, &self.plans.inverse);
        data.into_iter().map(|c| c.re).collect()
    }
}

/// Real samples of a scalar function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl Field {
    /// Wraps samples after checking their count and finiteness.
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_raw(grid: &PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|j| f(grid.node(j))).collect();
        Self::from_raw(grid, values)
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination; panics on mismatched grids.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "pointwise operation across grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(&self.grid, values)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `∫ f dx` by the periodic trapezoidal rule (spectral zero mode).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Same as [`integral`](Self::integral) on the unit torus.
    pub fn mean(&self) -> f64 {
        self.integral()
    }

    /// `∫ f g dx`.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "inner product across grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L² norm by quadrature in physical space.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum {
            grid: self.grid.clone(),
            coeffs: self.grid.forward(&self.values),
        }
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b)
    }
}

/// Normalized Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: PeriodicGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_coeffs(grid: &PeriodicGrid, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), grid.len());
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn to_field(&self) -> Field {
        Field::from_raw(&self.grid, self.grid.inverse(&self.coeffs))
    }

    /// Multiplies each coefficient by `m(flat index)`.
    pub fn apply(&self, m: impl Fn(usize) -> Complex64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * m(j))
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Multiplier `(i·2πk_axis)^order`, with the Nyquist frequency of that
    /// axis zeroed for odd orders.
    pub fn derivative(&self, axis: usize, order: u32) -> Self {
        let grid = self.grid.clone();
        self.apply(move |j| {
            let k = grid.wavevector(j)[axis];
            if order % 2 == 1 && grid.is_nyquist(k) {
                return Complex64::new(0.0, 0.0);
            }
            Complex64::new(0.0, 2.0 * PI * k as f64).powu(order)
        })
    }

    /// Zeros every mode with `|k_axis| > n/3` on some axis.
    pub fn dealiased(&self) -> Self {
        let grid = self.grid.clone();
        let cut = grid.dealias_cutoff();
        self.apply(move |j| {
            let k = grid.wavevector(j);
            if k[0].abs() > cut || k[1].abs() > cut {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }
}

/// Componentwise vector field, one [`Field`] per spatial axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<Field>,
}

impl VectorField {
    pub fn new(components: Vec<Field>) -> Result<Self, GridError> {
        let first = components.first().ok_or(GridError::Dimension(0))?;
        let grid = first.grid().clone();
        if components.len() != grid.dim() {
            return Err(GridError::Dimension(components.len()));
        }
        if components.iter().any(|c| *c.grid() != grid) {
            return Err(GridError::Mismatch);
        }
        Ok(Self { components })
    }

    pub(crate) fn from_raw(components: Vec<Field>) -> Self {
        Self { components }
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, &[0.0, 0.0][..grid.dim()])
    }

    pub fn constant(grid: &PeriodicGrid, c: &[f64]) -> Self {
        assert_eq!(c.len(), grid.dim());
        Self {
            components: c.iter().map(|&ci| Field::constant(grid, ci)).collect(),
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.components[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Field] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &Field {
        &self.components[axis]
    }

    pub fn into_components(self) -> Vec<Field> {
        self.components
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field) -> Self {
        Self {
            components: self.components.iter().map(f).collect(),
        }
    }

    pub fn zip_map(&self, other: &VectorField, f: impl Fn(&Field, &Field) -> Field) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Pointwise `a · b`.
    pub fn dot(&self, other: &VectorField) -> Field {
        let grid = self.grid();
        let mut acc = Field::zeros(grid);
        for (a, b) in self.components.iter().zip(&other.components) {
            acc = acc.zip_map(&(a * b), |x, y| x + y);
        }
        acc
    }

    /// Pointwise `|v|²`.
    pub fn norm_sq(&self) -> Field {
        self.dot(self)
    }

    /// Componentwise `∫ v dx`.
    pub fn integral(&self) -> Vec<f64> {
        self.components.iter().map(Field::integral).collect()
    }

    /// `max_x |v(x)|`.
    pub fn max_norm(&self) -> f64 {
        self.norm_sq().max().max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(Field::is_finite)
    }
}

/// Periodic convolution `(f∗g)(x) = ∫ f(x−y) g(y) dy`, evaluated as the
/// quadrature `dx^d Σ_j f(x−x_j) g(x_j)` through the transform.
pub fn convolve(f: &Field, g: &Field) -> Result<Field, GridError> {
    if f.grid() != g.grid() {
        return Err(GridError::Mismatch);
    }
    let gs = g.spectrum();
    Ok(convolve_spectral(f.spectrum().coeffs(), &gs).to_field())
}

/// Convolution against a precomputed kernel spectrum.
pub(crate) fn convolve_spectral(kernel: &[Complex64], g: &Spectrum) -> Spectrum {
    g.apply(|j| kernel[j])
}

/// Spectral `∂^order f / ∂x_axis^order`.
pub fn spectral_derivative(f: &Field, axis: usize, order: u32) -> Result<Field, GridError> {
    f.grid().check_axis(axis)?;
    if order != 1 && order != 2 {
        return Err(GridError::Order(order));
    }
    Ok(f.spectrum().derivative(axis, order).to_field())
}

pub fn gradient(f: &Field) -> VectorField {
    let s = f.spectrum();
    VectorField::from_raw(
        (0..f.grid().dim())
            .map(|axis| s.derivative(axis, 1).to_field())
            .collect(),
    )
}

pub fn divergence(v: &VectorField) -> Field {
    let grid = v.grid().clone();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (axis, c) in v.components().iter().enumerate() {
        let d = c.spectrum().derivative(axis, 1);
        for (a, b) in acc.iter_mut().zip(d.coeffs()) {
            *a += b;
        }
    }
    Spectrum::from_coeffs(&grid, acc).to_field()
}

/// Two-thirds-rule projection of a field.
pub fn dealias(f: &Field) -> Field {
    f.spectrum().dealiased().to_field()
}

/// `‖f‖_{H^s} = (Σ_k (1+|2πk|²)^s |f̂(k)|²)^{1/2}`.
pub fn sobolev_norm(f: &Field, s: f64) -> f64 {
    let grid = f.grid();
    f.spectrum()
        .coeffs()
        .iter()
        .enumerate()
        .map(|(j, c)| (1.0 + grid.angular_norm_sq(j)).powf(s) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}
