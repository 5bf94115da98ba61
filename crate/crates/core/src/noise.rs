//! Q-Wiener noise: covariance spectra, per-mode Ornstein-Uhlenbeck increments
//! and the keyed random stream that lets runs at different time steps share a
//! single Brownian path.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::spectral::{Modes, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `q_ij = Gamma / (i + j)^r`.
    PowerLaw { r: f64 },
    /// Eigenvalues of the exponentially decaying covariance kernel with
    /// correlation lengths `b1`, `b2`.
    ExpCovariance { b1: f64, b2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub gamma: f64,
    pub n: usize,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, gamma: f64, n: usize) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("noise amplitude {gamma} must be >= 0")));
        }
        match kind {
            NoiseKind::PowerLaw { r } if !(r > 0.0) => {
                return Err(Error::invalid("power-law exponent must be positive"))
            }
            NoiseKind::ExpCovariance { b1, b2 } if !(b1 > 0.0 && b2 > 0.0) => {
                return Err(Error::invalid("correlation lengths must be positive"))
            }
            _ => {}
        }
        if n == 0 {
            return Err(Error::invalid("noise truncation must be at least 1"));
        }
        Ok(NoiseSpec { kind, gamma, n })
    }

    /// Covariance eigenvalue of mode `(i, j)`. Mode `(0, 0)` carries no noise.
    pub fn q_value(&self, i: usize, j: usize, basis: &SpectralBasis) -> f64 {
        if i == 0 && j == 0 {
            return 0.0;
        }
        match self.kind {
            NoiseKind::PowerLaw { r } => self.gamma / ((i + j) as f64).powf(r),
            NoiseKind::ExpCovariance { b1, b2 } => {
                let a = basis.wavenumber_x(i) * b1;
                let b = basis.wavenumber_y(j) * b2;
                self.gamma * (-(a * a + b * b) / (2.0 * std::f64::consts::PI)).exp()
            }
        }
    }

    pub fn spectrum(&self, basis: &SpectralBasis) -> Modes {
        Modes::from_fn(basis.n(), |i, j| self.q_value(i, j, basis))
    }
}

/// Closed form of `int exp(-pi x^2 / (4 b^2)) cos(lambda x) dx` over the real
/// line, the identity behind the exponential-covariance spectrum.
pub fn gaussian_cosine_transform(b: f64, lambda: f64) -> f64 {
    2.0 * b * (-(lambda * b).powi(2) / std::f64::consts::PI).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuConvention {
    /// Printed update formula, with an extra `exp(-c dt)` prefactor.
    PaperPrefactor,
    /// Standard deviation of `int_0^dt exp(-c (dt - s)) dbeta(s)`.
    #[default]
    ItoIsometry,
}

/// `(1 - exp(-x)) / x`, equal to 1 at `x = 0`.
#[inline]
pub(crate) fn relax(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Covariance of `int e^{-c1 (dt-s)} dbeta` and `int e^{-c2 (dt-s)} dbeta`
/// for a scalar Brownian motion of intensity `q`.
pub fn ou_covariance(c1: f64, c2: f64, q: f64, dt: f64) -> f64 {
    q * dt * relax((c1 + c2) * dt)
}

pub fn ou_increment_std(c: f64, q: f64, dt: f64, convention: OuConvention) -> Result<f64> {
    if !(c >= 0.0 && q >= 0.0 && dt > 0.0) {
        return Err(Error::invalid(format!(
            "ou increment needs c >= 0, q >= 0, dt > 0 (got {c}, {q}, {dt})"
        )));
    }
    let std = ou_covariance(c, c, q, dt).sqrt();
    Ok(match convention {
        OuConvention::ItoIsometry => std,
        OuConvention::PaperPrefactor => (-c * dt).exp() * std,
    })
}

/// Counter-addressed standard normals.
///
/// A draw is identified by `(realization, step, slot)`; `width` slots make up
/// one step. The same key always yields the same value, regardless of the order
/// in which draws are requested or which thread requests them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    width: usize,
}

// u32 words consumed per normal (two u64 uniforms)
const WORDS_PER_NORMAL: u128 = 4;

impl RngStream {
    pub fn new(seed: u64, width: usize) -> Self {
        RngStream {
            seed,
            width: width.max(1),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn positioned(&self, realization: u64, step: u64, slot: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(realization);
        let pos = (step as u128 * self.width as u128 + slot as u128) * WORDS_PER_NORMAL;
        rng.set_word_pos(pos);
        rng
    }

    pub fn normal(&self, realization: u64, step: u64, slot: usize) -> f64 {
        assert!(slot < self.width, "slot {slot} outside stream width");
        box_muller(&mut self.positioned(realization, step, slot))
    }

    /// All `width` draws of one step, in slot order.
    pub fn fill_step(&self, realization: u64, step: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.width);
        let mut rng = self.positioned(realization, step, 0);
        for o in out.iter_mut() {
            *o = box_muller(&mut rng);
        }
    }
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = 1.0 - (rng.next_u64() >> 11) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-mode OU increments `std(c_ij, q_ij, dt) R_ij,k` for one time step,
/// using slots `0..N^2` of `rng`.
pub fn sample_increment_field(
    q: &Modes,
    rates: &Modes,
    dt: f64,
    convention: OuConvention,
    rng: &RngStream,
    realization: u64,
    step: u64,
) -> Result<Modes> {
    let n = q.n();
    check_len("increment rates", n, rates.n())?;
    if rng.width() < n * n {
        return Err(Error::invalid("random stream narrower than the mode count"));
    }
    let mut draws = vec![0.0; rng.width()];
    rng.fill_step(realization, step, &mut draws);
    let mut out = Modes::zeros(n);
    for (k, (o, z)) in out.as_mut_slice().iter_mut().zip(&draws).enumerate() {
        let std = ou_increment_std(rates.as_slice()[k], q.as_slice()[k], dt, convention)?;
        *o = std * z;
    }
    Ok(out)
}

/// Combines consecutive substep increments into the increment over their union:
/// `sum_s exp(-c (remaining after s)) fine_s`.
pub fn aggregate_increments(fine: &[Modes], rates: &Modes, dt_fine: f64) -> Result<Modes> {
    let first = fine
        .first()
        .ok_or_else(|| Error::invalid("no substep increments to aggregate"))?;
    let n = first.n();
    check_len("aggregate rates", n, rates.n())?;
    let mut acc = Modes::zeros(n);
    for f in fine {
        check_len("aggregate increments", n, f.n())?;
        accumulate_increment(&mut acc, f, rates, dt_fine);
    }
    Ok(acc)
}

/// `acc <- exp(-c dt) acc + inc`, the one-substep form of the aggregation.
pub fn accumulate_increment(acc: &mut Modes, inc: &Modes, rates: &Modes, dt: f64) {
    for ((a, i), c) in acc
        .as_mut_slice()
        .iter_mut()
        .zip(inc.as_slice())
        .zip(rates.as_slice())
    {
        *a = (-c * dt).exp() * *a + i;
    }
}

/// Lower Cholesky factor of the joint covariance of the stochastic integrals
/// `int e^{-c_r (dt - s)} dbeta(s)` for the given rates. Rank-deficient inputs
/// (repeated rates, `q = 0`) get zero columns.
pub fn coupled_factor(rates: &[f64], q: f64, dt: f64) -> Result<Vec<f64>> {
    if !(q >= 0.0 && dt > 0.0) || rates.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::invalid("coupled sampling needs nonnegative rates and q, dt > 0"));
    }
    let m = rates.len();
    let mut a = vec![0.0; m * m];
    for r in 0..m {
        for s in 0..m {
            a[r * m + s] = ou_covariance(rates[r], rates[s], q, dt);
        }
    }
    let scale = (0..m).map(|r| a[r * m + r]).fold(0.0, f64::max);
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= l[j * m + k] * l[j * m + k];
        }
        if d <= 1e-13 * scale {
            continue;
        }
        let d = d.sqrt();
        l[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = s / d;
        }
    }
    Ok(l)
}

/// Applies a factor from [`coupled_factor`] to independent standard normals.
pub fn apply_factor(factor: &[f64], normals: &[f64], out: &mut [f64]) {
    let m = out.len();
    for i in 0..m {
        out[i] = (0..=i).map(|k| factor[i * m + k] * normals[k]).sum();
    }
}

/// Jointly Gaussian pair of OU integrals over one step driven by the same
/// Brownian increment, drawn from slots `slot` and `slot + 1` of `rng`.
#[allow(clippy::too_many_arguments)]
pub fn sample_coupled_pair(
    c1: f64,
    c2: f64,
    q: f64,
    dt: f64,
    rng: &RngStream,
    realization: u64,
    step: u64,
    slot: usize,
) -> Result<(f64, f64)> {
    let l = coupled_factor(&[c1, c2], q, dt)?;
    let z = [
        rng.normal(realization, step, slot),
        rng.normal(realization, step, slot + 1),
    ];
    let mut out = [0.0; 2];
    apply_factor(&l, &z, &mut out);
    Ok((out[0], out[1]))
}

/// Per-mode jointly Gaussian OU integrals over one fine step, one channel per
/// rate field, all driven by the same Brownian path.
///
/// Each fine step consumes `channels` normals per mode from the stream, so
/// the draws do not depend on which channels a caller later uses.
#[derive(Debug, Clone)]
pub struct CoupledSampler {
    n: usize,
    channels: usize,
    dt: f64,
    factors: Vec<f64>,
    stream: RngStream,
}

impl CoupledSampler {
    pub fn new(q: &Modes, rates: &[Modes], dt: f64, seed: u64) -> Result<Self> {
        let n = q.n();
        let m = rates.len();
        if m == 0 {
            return Err(Error::invalid("coupled sampler needs at least one channel"));
        }
        for r in rates {
            check_len("channel rates", n, r.n())?;
        }
        let mut factors = Vec::with_capacity(n * n * m * m);
        let mut c = vec![0.0; m];
        for k in 0..n * n {
            for (ch, r) in rates.iter().enumerate() {
                c[ch] = r.as_slice()[k];
            }
            factors.extend(coupled_factor(&c, q.as_slice()[k], dt)?);
        }
        Ok(CoupledSampler {
            n,
            channels: m,
            dt,
            factors,
            stream: RngStream::new(seed, n * n * m),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Fills `out[ch]` with the increments of fine step `step`.
    pub fn sample(&self, realization: u64, step: u64, out: &mut [Modes]) {
        let (m, nn) = (self.channels, self.n * self.n);
        assert_eq!(out.len(), m);
        let mut z = vec![0.0; nn * m];
        self.stream.fill_step(realization, step, &mut z);
        let mut v = vec![0.0; m];
        for k in 0..nn {
            apply_factor(&self.factors[k * m * m..(k + 1) * m * m], &z[k * m..(k + 1) * m], &mut v);
            for (ch, o) in out.iter_mut().enumerate() {
                o.as_mut_slice()[k] = v[ch];
            }
        }
    }
}

/// Collects `ratio` consecutive fine increments of one channel into the
/// increment over the coarse step.
#[derive(Debug, Clone)]
pub struct LevelAccumulator {
    rates: Modes,
    dt_fine: f64,
    ratio: usize,
    filled: usize,
    acc: Modes,
    convention: OuConvention,
}

impl LevelAccumulator {
    pub fn new(rates: Modes, dt_fine: f64, ratio: usize, convention: OuConvention) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::invalid("level ratio must be at least 1"));
        }
        let n = rates.n();
        Ok(LevelAccumulator {
            rates,
            dt_fine,
            ratio,
            filled: 0,
            acc: Modes::zeros(n),
            convention,
        })
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    /// Adds one fine increment; returns the coarse increment once `ratio`
    /// increments have arrived.
    pub fn push(&mut self, fine: &Modes) -> Option<Modes> {
        accumulate_increment(&mut self.acc, fine, &self.rates, self.dt_fine);
        self.filled += 1;
        if self.filled < self.ratio {
            return None;
        }
        self.filled = 0;
        let n = self.acc.n();
        let mut out = std::mem::replace(&mut self.acc, Modes::zeros(n));
        if self.convention == OuConvention::PaperPrefactor {
            let dt = self.dt_fine * self.ratio as f64;
            for (o, c) in out.as_mut_slice().iter_mut().zip(self.rates.as_slice()) {
                *o *= (-c * dt).exp();
            }
        }
        Some(out)
    }
}
