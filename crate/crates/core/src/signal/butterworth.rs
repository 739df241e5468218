use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
/// First-order sections have `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Bilinear transform of the analog section
    /// `(n2 s² + n1 s + n0) / (d2 s² + d1 s + d0)` with `s = k(1 − z⁻¹)/(1 + z⁻¹)`.
    fn bilinear(n: [f64; 3], d: [f64; 3], k: f64) -> Self {
        let map = |c: [f64; 3]| {
            let (c0, c1, c2) = (c[0], c[1] * k, c[2] * k * k);
            [c2 + c1 + c0, 2.0 * (c0 - c2), c2 - c1 + c0]
        };
        let (b, a) = (map(n), map(d));
        Biquad { b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]], a: [1.0, a[1] / a[0], a[2] / a[0]] }
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    LowPass,
    HighPass,
}

/// Digital Butterworth filter as a chain of second-order sections, designed
/// from the analog prototype by the prewarped bilinear transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn new(kind: BandKind, order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::Config(format!("cutoff {cutoff} Hz must lie in (0, {}) Hz", fs / 2.0)));
        }
        let k = 2.0 * fs;
        let wc = k * (PI * cutoff / fs).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            // conjugate prototype pole pair on the unit circle, s² + 2ζs + 1
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let two_zeta = -2.0 * theta.cos();
            let (n, d) = match kind {
                BandKind::LowPass => ([wc * wc, 0.0, 0.0], [wc * wc, two_zeta * wc, 1.0]),
                BandKind::HighPass => ([0.0, 0.0, 1.0], [wc * wc, two_zeta * wc, 1.0]),
            };
            sections.push(Biquad::bilinear(n, d, k));
        }
        if order % 2 == 1 {
            let (n, d) = match kind {
                BandKind::LowPass => ([wc, 0.0, 0.0], [wc, 1.0, 0.0]),
                BandKind::HighPass => ([0.0, 1.0, 0.0], [wc, 1.0, 0.0]),
            };
            sections.push(Biquad::bilinear(n, d, k));
        }
        Ok(Butterworth { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Causal filtering from rest (transposed direct form II per section).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }
}

/// High-pass at `f_lo` followed by low-pass at `f_hi`, the pair applied
/// `cascades` times.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    stages: Vec<Butterworth>,
    fs: f64,
}

impl BandPass {
    pub fn new(order: usize, f_lo: f64, f_hi: f64, fs: f64, cascades: usize) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if !(0.0 < f_lo && f_lo < f_hi && f_hi < fs / 2.0) {
            return Err(Error::Config(format!(
                "band [{f_lo}, {f_hi}] Hz must satisfy 0 < f_lo < f_hi < {} Hz",
                fs / 2.0
            )));
        }
        if cascades == 0 {
            return Err(Error::Config("cascade count must be at least 1".into()));
        }
        let hp = Butterworth::new(BandKind::HighPass, order, f_lo, fs)?;
        let lp = Butterworth::new(BandKind::LowPass, order, f_hi, fs)?;
        let mut stages = Vec::with_capacity(2 * cascades);
        for _ in 0..cascades {
            stages.push(hp.clone());
            stages.push(lp.clone());
        }
        Ok(BandPass { stages, fs })
    }

    pub fn response(&self, freq: f64) -> Complex64 {
        self.stages.iter().map(|s| s.response(freq, self.fs)).product()
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.stages.iter().fold(x.to_vec(), |acc, s| s.filter(&acc))
    }
}

/// Keeps samples `0, factor, 2·factor, …`.
pub fn decimate(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Config("decimation factor must be at least 1".into()));
    }
    Ok(x.iter().step_by(factor).copied().collect())
}

/// Band-pass filter then decimate; the output rate is `fs / factor`.
pub fn bandpass_decimate(
    x: &[f64],
    fs: f64,
    band: (f64, f64),
    order: usize,
    cascades: usize,
    factor: usize,
) -> Result<Vec<f64>> {
    let bp = BandPass::new(order, band.0, band.1, fs, cascades)?;
    decimate(&bp.filter(x), factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// |H| of the analog Butterworth at the prewarped frequency equals the
    /// digital magnitude, 1/√(1 + (Ω/Ωc)^{2n}).
    fn analog_magnitude(kind: BandKind, order: usize, fc: f64, f: f64, fs: f64) -> f64 {
        let w = (PI * f / fs).tan();
        let wc = (PI * fc / fs).tan();
        let r = match kind {
            BandKind::LowPass => w / wc,
            BandKind::HighPass => wc / w,
        };
        1.0 / (1.0 + r.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn magnitude_matches_prototype() {
        let fs = 2000.0;
        for kind in [BandKind::LowPass, BandKind::HighPass] {
            for order in 1..=6 {
                let f = Butterworth::new(kind, order, 32.0, fs).unwrap();
                for freq in [1.0, 10.0, 32.0, 80.0, 400.0] {
                    let got = f.response(freq, fs).norm();
                    let want = analog_magnitude(kind, order, 32.0, freq, fs);
                    assert!((got - want).abs() < 1e-9, "{kind:?} n={order} f={freq}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn dc_rejected() {
        let fs = 2000.0;
        let x = vec![1.0; 20_000];
        let y = BandPass::new(5, 6.0, 32.0, fs, 2).unwrap().filter(&x);
        let tail = y[10_000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(tail <= 1e-3, "{tail}");
    }

    #[test]
    fn mid_band_gain() {
        let fs = 2000.0;
        let x: Vec<f64> = (0..20_000).map(|k| (2.0 * PI * 15.0 * k as f64 / fs).sin()).collect();
        let y = BandPass::new(5, 6.0, 32.0, fs, 2).unwrap().filter(&x);
        let amp = y[10_000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((0.9..=1.1).contains(&amp), "{amp}");
    }

    #[test]
    fn decimation_bookkeeping() {
        let x: Vec<f64> = (0..2001).map(|k| k as f64).collect();
        let y = bandpass_decimate(&x, 2000.0, (6.0, 32.0), 5, 2, 20).unwrap();
        assert_eq!(y.len(), 2001usize.div_ceil(20));
        assert_eq!(decimate(&x, 20).unwrap()[3], 60.0);
        assert_eq!(decimate(&x[..2000], 20).unwrap().len(), 100);
    }

    #[test]
    fn band_must_fit_nyquist() {
        assert!(matches!(BandPass::new(5, 6.0, 1200.0, 2000.0, 1), Err(Error::Config(_))));
        assert!(matches!(BandPass::new(5, 40.0, 32.0, 2000.0, 1), Err(Error::Config(_))));
        assert!(matches!(decimate(&[1.0], 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn linear_in_input(a in -50.0..50.0f64, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let y = bandpass_decimate(&x, 2000.0, (6.0, 32.0), 5, 2, 20).unwrap();
            let ay = bandpass_decimate(&ax, 2000.0, (6.0, 32.0), 5, 2, 20).unwrap();
            for (p, q) in y.iter().zip(&ay) {
                prop_assert!((a * p - q).abs() <= 1e-10 * (1.0 + q.abs()));
            }
        }
    }
}
