//! CSV experiment files: comma-separated, one header row, time in seconds in
//! the first column. Row numbers in errors count the header as row 1.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ExperimentData, InputSignal};

/// A numeric CSV table keyed by its header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub time_name: String,
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// One vector per named column.
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Config(format!("channel '{name}' not found in data file")))
    }

    fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols: Vec<&[f64]> = names.iter().map(|n| self.column(n)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.times.len(), cols.len(), |r, c| cols[c][r]))
    }

    /// Experiment with the named output and input channels, inputs sampled
    /// at the measurement times.
    pub fn experiment(&self, outputs: &[String], inputs: &[String]) -> Result<ExperimentData> {
        let z = self.matrix(outputs)?;
        let u = self.matrix(inputs)?;
        let input = InputSignal::new(self.times.clone(), u)?;
        ExperimentData::with_names(self.times.clone(), z, input, outputs.to_vec(), inputs.to_vec())
    }
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse { row, message: format!("column '{col}': '{s}' is not a number") })?;
    if v.is_nan() {
        return Err(Error::Parse { row, message: format!("column '{col}' is NaN") });
    }
    Ok(v)
}

pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(Error::Parse { row: 1, message: "need a time column and at least one channel".into() });
    }
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); header.len() - 1];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let t = parse_cell(&rec[0], row, &header[0])?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Parse { row, message: format!("time {t} does not increase (previous {prev})") });
            }
        }
        times.push(t);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse_cell(&rec[c + 1], row, &header[c + 1])?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Parse { row: times.len() + 1, message: "need at least two data rows".into() });
    }
    Ok(CsvTable { time_name: header[0].clone(), names: header[1..].to_vec(), times, columns })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_csv(f)
}

/// Reads an experiment, extracting the named channels.
pub fn load_csv(path: &Path, outputs: &[String], inputs: &[String]) -> Result<ExperimentData> {
    read_csv(path)?.experiment(outputs, inputs)
}

/// Reads a numeric table without the time-column checks of [`parse_csv`].
/// Lines starting with `#` are skipped; `NaN` cells are accepted.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let vals = rec
            .iter()
            .zip(&header)
            .map(|(s, name)| {
                s.parse().map_err(|_| Error::Parse { row, message: format!("column '{name}': '{s}' is not a number") })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok((header, rows))
}

/// Writes a numeric table with 17 significant digits.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:.16e}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `time, inputs…, outputs…` with inputs interpolated at the
/// measurement times.
pub fn write_experiment(path: &Path, data: &ExperimentData) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend(data.input_names.iter().cloned());
    header.extend(data.output_names.iter().cloned());
    let mut rows = Vec::with_capacity(data.len());
    for (k, &t) in data.times.iter().enumerate() {
        let mut r = vec![t];
        r.extend(data.input.interpolate(t)?);
        r.extend(data.outputs.row(k).iter());
        rows.push(r);
    }
    write_table(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_rows() {
        let t = parse_csv("t,w,q,az,de\n0,1,2,3,0\n0.1,1.5,2.5,3.5,0.1\n0.2,2,3,4,0.2\n".as_bytes()).unwrap();
        assert_eq!(t.times, vec![0.0, 0.1, 0.2]);
        let d = t.experiment(&names(&["w", "q", "az"]), &names(&["de"])).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.ny(), 3);
        assert_eq!(d.outputs[(2, 2)], 4.0);
    }

    #[test]
    fn duplicated_timestamp_names_row() {
        let r = parse_csv("t,w\n0,1\n0.1,2\n0.1,3\n".as_bytes());
        assert!(matches!(r, Err(Error::Parse { row: 4, .. })), "{r:?}");
    }

    #[test]
    fn missing_channel_named() {
        let t = parse_csv("t,w\n0,1\n1,2\n".as_bytes()).unwrap();
        match t.experiment(&names(&["w", "az"]), &[]) {
            Err(Error::Config(m)) => assert!(m.contains("az")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell() {
        let r = parse_csv("t,w\n0,1\n1,abc\n".as_bytes());
        assert!(matches!(r, Err(Error::Parse { row: 3, .. })));
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let t = parse_csv("t,w,de\n0,0.1,1\n0.5,0.30000000000000004,2\n1,1e-300,3\n".as_bytes()).unwrap();
        let d = t.experiment(&names(&["w"]), &names(&["de"])).unwrap();
        let p = dir.path().join("x.csv");
        write_experiment(&p, &d).unwrap();
        let back = load_csv(&p, &names(&["w"]), &names(&["de"])).unwrap();
        assert_eq!(back, d);
    }
}
