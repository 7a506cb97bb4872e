//! Communication weights `ψ`: symmetric, strictly positive, and smooth.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::grid::{gradient, Field, GridError, PeriodicGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel not positive: minimum {min} <= 0")]
    NotPositive { min: f64 },
    #[error("kernel samples are not symmetric (max deviation {deviation:e})")]
    Asymmetric { deviation: f64 },
    #[error("invalid kernel parameters: {0}")]
    Invalid(String),
    #[error("cannot parse kernel descriptor `{0}`")]
    Parse(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Analytic kernel presets on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `ψ ≡ a`.
    Constant { a: f64 },
    /// `ψ = a + b Π_axes cos(2π x_axis)`, requires `a > |b|`.
    Cosine { a: f64, b: f64 },
    /// `ψ = base + amplitude Π_axes φ(d_axis / width)` with the C^∞ bump
    /// `φ(r) = exp(1 − 1/(1 − r²))` on `|r| < 1` and `d` the minimal-image
    /// displacement. `width ≤ 1/2` so the bump never wraps onto itself.
    Bump { base: f64, amplitude: f64, width: f64 },
}

fn bump_profile(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Maps a coordinate difference to `[-1/2, 1/2)`.
pub fn minimal_image(d: f64) -> f64 {
    d - (d + 0.5).floor()
}

impl KernelSpec {
    fn validate(&self) -> Result<(), KernelError> {
        match *self {
            KernelSpec::Constant { a } => {
                if !(a.is_finite()) {
                    return Err(KernelError::Invalid("constant must be finite".into()));
                }
                if a <= 0.0 {
                    return Err(KernelError::NotPositive { min: a });
                }
            }
            KernelSpec::Cosine { a, b } => {
                if !(a.is_finite() && b.is_finite()) {
                    return Err(KernelError::Invalid("cosine parameters must be finite".into()));
                }
                if a - b.abs() <= 0.0 {
                    return Err(KernelError::NotPositive { min: a - b.abs() });
                }
            }
            KernelSpec::Bump {
                base,
                amplitude,
                width,
            } => {
                if !(base.is_finite() && amplitude.is_finite() && width.is_finite()) {
                    return Err(KernelError::Invalid("bump parameters must be finite".into()));
                }
                if width <= 0.0 || width > 0.5 {
                    return Err(KernelError::Invalid(format!(
                        "bump width {width} outside (0, 1/2]; wider bumps would be clipped by the period"
                    )));
                }
                let min = base + amplitude.min(0.0);
                if min <= 0.0 {
                    return Err(KernelError::NotPositive { min });
                }
            }
        }
        Ok(())
    }

    /// Evaluates `ψ(d)` for a displacement `d` (unused coordinates ignored).
    pub fn eval(&self, d: &[f64]) -> f64 {
        match *self {
            KernelSpec::Constant { a } => a,
            KernelSpec::Cosine { a, b } => {
                a + b * d.iter().map(|&di| (2.0 * PI * di).cos()).product::<f64>()
            }
            KernelSpec::Bump {
                base,
                amplitude,
                width,
            } => {
                base + amplitude
                    * d.iter()
                        .map(|&di| bump_profile(minimal_image(di) / width))
                        .product::<f64>()
            }
        }
    }

    /// Closed-form minimum where one is known.
    fn analytic_min(&self) -> Option<f64> {
        match *self {
            KernelSpec::Constant { a } => Some(a),
            KernelSpec::Cosine { a, b } => Some(a - b.abs()),
            KernelSpec::Bump { .. } => None,
        }
    }

    /// Cosine expansion `ψ(d) = Σ c_m cos(2π k_m·d)` for trigonometric
    /// presets, used for O(N) pairwise sums.
    pub fn cosine_modes(&self, dim: usize) -> Option<Vec<(f64, [i64; 2])>> {
        match *self {
            KernelSpec::Constant { a } => Some(vec![(a, [0, 0])]),
            KernelSpec::Cosine { a, b } => {
                if dim == 1 {
                    Some(vec![(a, [0, 0]), (b, [1, 0])])
                } else {
                    // cos(2πx)cos(2πy) = ½cos(2π(x+y)) + ½cos(2π(x−y))
                    Some(vec![(a, [0, 0]), (0.5 * b, [1, 1]), (0.5 * b, [1, -1])])
                }
            }
            KernelSpec::Bump { .. } => None,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Constant { a } => write!(f, "constant {a}"),
            KernelSpec::Cosine { a, b } => write!(f, "cosine {a} {b}"),
            KernelSpec::Bump {
                base,
                amplitude,
                width,
            } => write!(f, "bump {base} {amplitude} {width}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    /// `constant a` | `cosine a b` | `bump base amplitude width`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let nums = |expected: usize| -> Result<Vec<f64>, KernelError> {
            if words.len() != expected + 1 {
                return Err(KernelError::Parse(s.to_string()));
            }
            words[1..]
                .iter()
                .map(|w| w.parse::<f64>().map_err(|_| KernelError::Parse(s.to_string())))
                .collect()
        };
        let spec = match words.first().copied() {
            Some("constant") => {
                let p = nums(1)?;
                KernelSpec::Constant { a: p[0] }
            }
            Some("cosine") => {
                let p = nums(2)?;
                KernelSpec::Cosine { a: p[0], b: p[1] }
            }
            Some("bump") => {
                let p = nums(3)?;
                KernelSpec::Bump {
                    base: p[0],
                    amplitude: p[1],
                    width: p[2],
                }
            }
            _ => return Err(KernelError::Parse(s.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A sampled communication weight together with its certified lower bound.
#[derive(Clone, Debug)]
pub struct Kernel {
    spec: Option<KernelSpec>,
    samples: Field,
    spectral: Vec<Complex64>,
    psi_m: f64,
    sup_norm: f64,
    lipschitz_bound: f64,
}

/// Samples a preset on `grid` and certifies positivity and symmetry.
pub fn build_kernel(spec: &KernelSpec, grid: &PeriodicGrid) -> Result<Kernel, KernelError> {
    spec.validate()?;
    let dim = grid.dim();
    let samples = Field::from_fn(grid, |x| spec.eval(&x[..dim]));
    let mut kernel = Kernel::from_samples(samples)?;
    if let Some(min) = spec.analytic_min() {
        kernel.psi_m = min;
    }
    kernel.spec = Some(*spec);
    Ok(kernel)
}

impl Kernel {
    /// Wraps a user-supplied sample table, rejecting nonpositive or
    /// asymmetric data. `psi_m` is the sampled minimum.
    pub fn from_samples(samples: Field) -> Result<Self, KernelError> {
        let grid = samples.grid().clone();
        let min = samples.min();
        if min <= 0.0 {
            return Err(KernelError::NotPositive { min });
        }
        let sup_norm = samples.max_abs();
        let n = grid.n();
        let deviation = (0..grid.len())
            .map(|j| {
                let [i0, i1] = grid.multi_index(j);
                let mirror = grid.flat_index([(n - i0) % n, (n - i1) % n]);
                (samples.values()[j] - samples.values()[mirror]).abs()
            })
            .fold(0.0, f64::max);
        if deviation > 1e-12 * sup_norm.max(1.0) {
            return Err(KernelError::Asymmetric { deviation });
        }
        let lipschitz_bound = gradient(&samples).max_norm();
        let spectral = samples.spectrum().coeffs().to_vec();
        Ok(Self {
            spec: None,
            samples,
            spectral,
            psi_m: min,
            sup_norm,
            lipschitz_bound,
        })
    }

    pub fn spec(&self) -> Option<&KernelSpec> {
        self.spec.as_ref()
    }

    pub fn samples(&self) -> &Field {
        &self.samples
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.samples.grid()
    }

    /// Normalized Fourier coefficients of the samples.
    pub fn spectral(&self) -> &[Complex64] {
        &self.spectral
    }

    pub fn psi_m(&self) -> f64 {
        self.psi_m
    }

    /// `‖ψ‖_∞` over the samples.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// `ψ(d)` off the grid: the analytic formula for presets, otherwise the
    /// trigonometric interpolant of the samples.
    pub fn eval(&self, d: &[f64]) -> f64 {
        if let Some(spec) = &self.spec {
            return spec.eval(d);
        }
        let grid = self.grid();
        self.spectral
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let k = grid.wavevector(j);
                let phase: f64 = d
                    .iter()
                    .zip(k.iter())
                    .map(|(&di, &ki)| 2.0 * PI * ki as f64 * di)
                    .sum();
                c.re * phase.cos() - c.im * phase.sin()
            })
            .sum()
    }

    /// Same kernel re-sampled on another grid.
    pub fn resample(&self, grid: &PeriodicGrid) -> Result<Kernel, KernelError> {
        match &self.spec {
            Some(spec) => build_kernel(spec, grid),
            None => {
                let dim = grid.dim();
                Kernel::from_samples(Field::from_fn(grid, |x| self.eval(&x[..dim])))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{convolve, make_grid};

    #[test]
    fn constant_kernel_bound() {
        let g = make_grid(1, 16).unwrap();
        let k = build_kernel(&KernelSpec::Constant { a: 1.0 }, &g).unwrap();
        assert_eq!(k.psi_m(), 1.0);
        assert_eq!(k.sup_norm(), 1.0);
        assert!(k.lipschitz_bound() < 1e-12);
    }

    #[test]
    fn cosine_minimum_at_half() {
        let g = make_grid(1, 16).unwrap();
        let spec = KernelSpec::Cosine { a: 1.0, b: 0.5 };
        let k = build_kernel(&spec, &g).unwrap();
        assert_eq!(k.psi_m(), 0.5);
        assert!((k.samples().values()[8] - 0.5).abs() < 1e-15);
        assert!((k.samples().min() - 0.5).abs() < 1e-15);
        assert!((k.sup_norm() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_specs_rejected() {
        let g = make_grid(1, 16).unwrap();
        let err = build_kernel(&KernelSpec::Cosine { a: 1.0, b: 2.0 }, &g).unwrap_err();
        assert_eq!(err, KernelError::NotPositive { min: -1.0 });
        assert!("cosine 1 2".parse::<KernelSpec>().is_err());
        assert!("constant 0".parse::<KernelSpec>().is_err());
        assert!("bump 0.5 -0.6 0.2".parse::<KernelSpec>().is_err());
        assert!(matches!(
            "bump 1 1 0.7".parse::<KernelSpec>(),
            Err(KernelError::Invalid(_))
        ));
        assert!(matches!("gauss 1".parse::<KernelSpec>(), Err(KernelError::Parse(_))));
        assert!(matches!("cosine 1".parse::<KernelSpec>(), Err(KernelError::Parse(_))));
    }

    #[test]
    fn asymmetric_samples_rejected() {
        let g = make_grid(1, 16).unwrap();
        let f = Field::from_fn(&g, |x| 2.0 + (2.0 * PI * x[0]).sin());
        assert!(matches!(
            Kernel::from_samples(f),
            Err(KernelError::Asymmetric { .. })
        ));
        let neg = Field::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        assert!(matches!(
            Kernel::from_samples(neg),
            Err(KernelError::NotPositive { .. })
        ));
    }

    #[test]
    fn bump_kernel_is_smooth_and_symmetric() {
        let g = make_grid(2, 32).unwrap();
        let spec = KernelSpec::Bump {
            base: 0.2,
            amplitude: 1.0,
            width: 0.3,
        };
        let k = build_kernel(&spec, &g).unwrap();
        assert!((k.psi_m() - 0.2).abs() < 1e-15);
        assert!((k.sup_norm() - 1.2).abs() < 1e-15);
        assert!(k.lipschitz_bound().is_finite());
        for c in k.spectral() {
            assert!(c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_round_trip() {
        for s in ["constant 1", "cosine 1 0.5", "bump 0.3 -0.1 0.25"] {
            let spec: KernelSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<KernelSpec>().unwrap(), spec);
            assert_eq!(spec.to_string(), s);
        }
    }

    #[test]
    fn interpolant_matches_formula() {
        let g = make_grid(1, 16).unwrap();
        let spec = KernelSpec::Cosine { a: 1.0, b: 0.5 };
        let k = build_kernel(&spec, &g).unwrap();
        let raw = Kernel::from_samples(k.samples().clone()).unwrap();
        for d in [0.0, 0.13, -0.37, 0.5] {
            assert!((raw.eval(&[d]) - spec.eval(&[d])).abs() < 1e-13);
        }
    }

    #[test]
    fn convolution_lower_bound() {
        let g = make_grid(1, 64).unwrap();
        let k = build_kernel(&KernelSpec::Cosine { a: 1.0, b: 0.5 }, &g).unwrap();
        let rho = Field::from_fn(&g, |x| 1.0 + 0.9 * (2.0 * PI * x[0]).cos() + 0.05 * (6.0 * PI * x[0]).sin());
        let mass = rho.integral();
        let c = convolve(k.samples(), &rho).unwrap();
        for v in c.values() {
            assert!(*v >= k.psi_m() * mass - 1e-10);
        }
    }

    #[test]
    fn cosine_modes_reproduce_kernel() {
        for dim in [1, 2] {
            let spec = KernelSpec::Cosine { a: 1.0, b: 0.4 };
            let modes = spec.cosine_modes(dim).unwrap();
            for d in [[0.1, 0.3], [0.45, -0.2], [0.0, 0.0]] {
                let series: f64 = modes
                    .iter()
                    .map(|(c, k)| {
                        let ph: f64 = (0..dim).map(|a| 2.0 * PI * k[a] as f64 * d[a]).sum();
                        c * ph.cos()
                    })
                    .sum();
                assert!((series - spec.eval(&d[..dim])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn minimal_image_range() {
        assert_eq!(minimal_image(0.75), -0.25);
        assert_eq!(minimal_image(-0.75), 0.25);
        assert_eq!(minimal_image(0.5), -0.5);
        assert_eq!(minimal_image(0.2), 0.2);
    }
}
