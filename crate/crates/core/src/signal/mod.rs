//! Preprocessing filters and frequency-domain validation.

mod butterworth;
mod etfe;

use nalgebra::DMatrix;

pub use butterworth::{bandpass_decimate, decimate, BandKind, BandPass, Biquad, Butterworth};
pub use etfe::{etfe, Etfe, FreqComparison, FreqRow};

use crate::error::{Error, Result};
use crate::model::{ExperimentData, InputSignal};
use crate::models::Modal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessing {
    pub band: (f64, f64),
    pub order: usize,
    /// Number of high-pass/low-pass pair applications.
    pub cascades: usize,
    pub decimation: usize,
}

/// Sampling rate of a uniform grid, or an error when the grid is not uniform
/// to 1e−6 relative.
pub fn uniform_rate(times: &[f64]) -> Result<f64> {
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::Parse { row: k + 1, message: "sampling is not uniform".into() });
        }
    }
    Ok(1.0 / dt)
}

/// Filters every input and output channel with the same band-pass and
/// decimates. Inputs must be sampled at the measurement times.
pub fn preprocess(data: &ExperimentData, settings: &Preprocessing) -> Result<ExperimentData> {
    if data.input.times() != data.times.as_slice() {
        return Err(Error::Config("preprocessing needs inputs sampled at the measurement times".into()));
    }
    let fs = uniform_rate(&data.times)?;
    let bp = BandPass::new(settings.order, settings.band.0, settings.band.1, fs, settings.cascades)?;
    let process = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let cols: Vec<Vec<f64>> =
            m.column_iter().map(|c| decimate(&bp.filter(c.as_slice()), settings.decimation)).collect::<Result<_>>()?;
        let rows = cols.first().map_or(0, Vec::len);
        Ok(DMatrix::from_fn(rows, m.ncols(), |r, c| cols[c][r]))
    };
    let times = decimate(&data.times, settings.decimation)?;
    let outputs = process(&data.outputs)?;
    let input = InputSignal::new(times.clone(), process(data.input.values())?)?;
    ExperimentData::with_names(times, outputs, input, data.output_names.clone(), data.input_names.clone())
}

/// ETFE of a single-input single-output experiment against the modal
/// model's response, over `band`.
pub fn freq_response_compare(
    data: &ExperimentData,
    model: &Modal,
    p: &[f64],
    band: (f64, f64),
) -> Result<FreqComparison> {
    if data.ny() != 1 || data.input.nu() != 1 {
        return Err(Error::Config("frequency comparison needs one input and one output".into()));
    }
    let fs = uniform_rate(&data.times)?;
    let mut u = Vec::with_capacity(data.len());
    for &t in &data.times {
        u.push(data.input.interpolate(t)?[0]);
    }
    let y: Vec<f64> = data.outputs.column(0).iter().copied().collect();
    let e = etfe(&u, &y, fs, band)?;
    Ok(FreqComparison::new(&e, |f| model.frequency_response(p, f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{band_limited_noise, input_from_samples, simulate, uniform_times, SimulationOptions};
    use std::f64::consts::PI;

    #[test]
    fn noiseless_modal_self_consistency() {
        let m = Modal::new(2).unwrap();
        let p =
            m.pack(&[-0.5, -1.2], &[2.0 * PI * 8.0, 2.0 * PI * 20.0], &[1.0, 1.0], &[(1.0, 0.5), (0.8, -0.3)]).unwrap();
        let fine = uniform_times(0.0, 0.001, 30_001);
        let u = band_limited_noise(&fine, 2.0, 30.0, 1.0, 3).unwrap();
        let input = input_from_samples(&fine, &u).unwrap();
        let times = uniform_times(0.0, 0.01, 3001);
        let data =
            simulate(&m, &p, &[0.0; 4], &input, &times, &SimulationOptions { substeps: 10, ..Default::default() })
                .unwrap();
        let cmp = freq_response_compare(&data, &m, &p, (3.0, 30.0)).unwrap();
        let med = cmp.median_relative_deviation().unwrap();
        assert!(med <= 0.1, "{med}");
    }

    #[test]
    fn preprocessing_bookkeeping() {
        let times = uniform_times(0.0, 0.0005, 4000);
        let u: Vec<f64> = times.iter().map(|t| (2.0 * PI * 15.0 * t).sin()).collect();
        let input = input_from_samples(&times, &u).unwrap();
        let y = DMatrix::from_column_slice(4000, 1, &u);
        let data = ExperimentData::new(times, y, input).unwrap();
        let out =
            preprocess(&data, &Preprocessing { band: (6.0, 32.0), order: 5, cascades: 2, decimation: 20 }).unwrap();
        assert_eq!(out.len(), 200);
        assert!((uniform_rate(&out.times).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(out.input.values()[(50, 0)], out.outputs[(50, 0)]);
    }
}
