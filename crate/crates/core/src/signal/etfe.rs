use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Hann-windowed single-record empirical transfer function estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Etfe {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Bins inside the band dropped because the input spectrum vanished.
    pub dropped: Vec<f64>,
}

/// Bins whose input magnitude is below this fraction of the largest one
/// count as zero.
const ZERO_INPUT: f64 = 1e-12;

/// `Y(f)/U(f)` at the DFT bins inside `band` (inclusive), excluding DC.
pub fn etfe(input: &[f64], output: &[f64], fs: f64, band: (f64, f64)) -> Result<Etfe> {
    let n = input.len();
    if n != output.len() {
        return Err(Error::Dimension(format!("input has {n} samples, output {}", output.len())));
    }
    if n < 4 {
        return Err(Error::Domain("ETFE needs at least four samples".into()));
    }
    if !(fs > 0.0 && band.0 < band.1) {
        return Err(Error::Config(format!("invalid band [{}, {}] Hz", band.0, band.1)));
    }
    let window: Vec<f64> = (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect();
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().zip(&window).map(|(v, w)| Complex64::new(v * w, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf
    };
    let (u, y) = (spectrum(input), spectrum(output));
    let u_max = u.iter().take(n / 2 + 1).map(|c| c.norm()).fold(0.0, f64::max);
    let mut out = Etfe { freqs: Vec::new(), values: Vec::new(), dropped: Vec::new() };
    for k in 1..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < band.0 || f > band.1 {
            continue;
        }
        if u[k].norm() <= ZERO_INPUT * u_max {
            out.dropped.push(f);
            continue;
        }
        out.freqs.push(f);
        out.values.push(y[k] / u[k]);
    }
    Ok(out)
}

/// One row of a frequency-response comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqRow {
    pub freq: f64,
    pub etfe: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreqComparison {
    pub rows: Vec<FreqRow>,
    pub dropped: Vec<f64>,
}

impl FreqComparison {
    /// ETFE magnitudes against a model response evaluated at the same bins.
    pub fn new<F: Fn(f64) -> Complex64>(etfe: &Etfe, model: F) -> Self {
        let rows = etfe
            .freqs
            .iter()
            .zip(&etfe.values)
            .map(|(&f, e)| FreqRow { freq: f, etfe: e.norm(), model: model(f).norm() })
            .collect();
        FreqComparison { rows, dropped: etfe.dropped.clone() }
    }

    /// Median of `||ETFE| − |model|| / |model|` over rows with a nonzero
    /// model response; `None` when there are no such rows.
    pub fn median_relative_deviation(&self) -> Option<f64> {
        let mut dev: Vec<f64> =
            self.rows.iter().filter(|r| r.model > 0.0).map(|r| (r.etfe - r.model).abs() / r.model).collect();
        if dev.is_empty() {
            return None;
        }
        dev.sort_by(f64::total_cmp);
        let m = dev.len();
        Some(if m % 2 == 1 { dev[m / 2] } else { 0.5 * (dev[m / 2 - 1] + dev[m / 2]) })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,etfe_mag,model_mag\n");
        for r in &self.rows {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", r.freq, r.etfe, r.model));
        }
        for f in &self.dropped {
            s.push_str(&format!("# dropped {f:.16e}: zero input spectrum\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_gain_recovered() {
        let fs = 100.0;
        let u: Vec<f64> = (0..1000).map(|k| ((k * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let y: Vec<f64> = u.iter().map(|v| -2.5 * v).collect();
        let e = etfe(&u, &y, fs, (1.0, 40.0)).unwrap();
        assert!(!e.freqs.is_empty());
        for v in &e.values {
            assert!((v - Complex64::new(-2.5, 0.0)).norm() < 1e-9);
        }
        assert!(e.freqs.iter().all(|f| (1.0..=40.0).contains(f)));
    }

    /// A one-sample delay has response e^{−j2πf/fs}; the circular shift
    /// keeps the DFT relation exact.
    #[test]
    fn circular_delay_phase() {
        let fs = 50.0;
        let n = 512;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|k| u[(k + n - 1) % n]).collect();
        let e = etfe(&u, &y, fs, (0.0, 25.0)).unwrap();
        let med = {
            let mut m: Vec<f64> = e
                .values
                .iter()
                .zip(&e.freqs)
                .map(|(v, f)| (v - Complex64::from_polar(1.0, -2.0 * PI * f / fs)).norm())
                .collect();
            m.sort_by(f64::total_cmp);
            m[m.len() / 2]
        };
        assert!(med < 0.05, "{med}");
    }

    #[test]
    fn zero_input_bins_dropped() {
        let u: Vec<f64> = (0..64).map(|k| (2.0 * PI * 4.0 * k as f64 / 64.0).sin()).collect();
        let e = etfe(&u, &u, 64.0, (1.0, 32.0)).unwrap();
        assert!(!e.dropped.is_empty());
        assert!(e.freqs.iter().all(|f| (3.0..=5.0).contains(f)));
    }

    #[test]
    fn zero_model_has_no_deviation() {
        let e = Etfe { freqs: vec![1.0, 2.0], values: vec![Complex64::new(1.0, 0.0); 2], dropped: vec![] };
        let c = FreqComparison::new(&e, |_| Complex64::new(0.0, 0.0));
        assert!(c.rows.iter().all(|r| r.model == 0.0));
        assert_eq!(c.median_relative_deviation(), None);
        let c = FreqComparison::new(&e, |f| Complex64::new(f, 0.0));
        assert_eq!(c.median_relative_deviation(), Some(0.25));
    }
}
