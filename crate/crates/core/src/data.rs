//! Labelled datasets: synthetic XOR generation, CSV loading, three-way
//! splits and mean squared error.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        Error::check_dim(xs.len(), ys.len())?;
        if let Some(first) = xs.first() {
            for (i, x) in xs.iter().enumerate() {
                Error::check_dim(first.len(), x.len())?;
                if x.iter().any(|v| !v.is_finite()) || !ys[i].is_finite() {
                    return Err(Error::NonFinite(format!("row {i}")));
                }
            }
        }
        Ok(LabeledDataset {
            xs,
            ys,
            feature_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// Removes a named feature column if present. Returns whether it was found.
    pub fn drop_feature(&mut self, name: &str) -> bool {
        let Some(names) = self.feature_names.as_mut() else {
            return false;
        };
        let Some(idx) = names.iter().position(|n| n == name) else {
            return false;
        };
        names.remove(idx);
        for x in &mut self.xs {
            x.remove(idx);
        }
        true
    }

    fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Writes `header..., target` CSV. Feature names default to `x_1..x_D`.
    pub fn write_csv<W: std::io::Write>(&self, out: W, target: &str) -> Result<()> {
        let to_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = match &self.feature_names {
            Some(n) => n.clone(),
            None => (1..=self.dim()).map(|i| format!("x_{i}")).collect(),
        };
        header.push(target.to_string());
        w.write_record(&header).map_err(to_err)?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        Ok(())
    }
}

/// `x ~ U[0,1]^2`, `y = XOR(x_1 < 0.5, x_2 < 0.5) + N(0, noise_sd^2)`.
pub fn gen_xor(n: usize, noise_sd: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 1 {
        return Err(Error::invalid("gen_xor needs n >= 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_sd must be finite and >= 0, got {noise_sd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = vec![rng.random::<f64>(), rng.random::<f64>()];
        let label = f64::from(u8::from((x[0] < 0.5) != (x[1] < 0.5)));
        let eps: f64 = rng.sample(StandardNormal);
        ys.push(label + noise_sd * eps);
        xs.push(x);
    }
    let mut d = LabeledDataset::new(xs, ys)?;
    d.feature_names = Some(vec!["x_1".into(), "x_2".into()]);
    Ok(d)
}

/// Loads a comma-separated file with a header row. Every column other than
/// `target_column` becomes a feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    let csv_err = |message: String| Error::Csv {
        path: path.into(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            csv_err(format!(
                "target column {target_column:?} not found in header {header:?}"
            ))
        })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(csv_err(format!(
                "row {row} (line {}): expected {} fields, found {}",
                row + 1,
                header.len(),
                record.len()
            )));
        }
        let mut x = Vec::with_capacity(feature_names.len());
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    csv_err(format!(
                    "row {row} (line {}), column {:?}: cannot parse {cell:?} as a finite number",
                    row + 1,
                    header[col]
                ))
                })?;
            if col == target {
                ys.push(value);
            } else {
                x.push(value);
            }
        }
        xs.push(x);
    }
    if ys.is_empty() {
        return Err(csv_err("no data rows".into()));
    }
    let mut d = LabeledDataset::new(xs, ys)?;
    d.feature_names = Some(feature_names);
    Ok(d)
}

/// Seeded shuffle, then contiguous cuts at `floor(f1 N)` and `floor((f1 + f2) N)`.
pub fn split3(
    data: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let (f1, f2, f3) = fractions;
    if !(f1 > 0.0 && f2 > 0.0 && f3 > 0.0) || (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be positive and sum to 1, got ({f1}, {f2}, {f3})"
        )));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon keeps exact products such as 0.7 * 10 from flooring to 6
    let a = ((f1 * n as f64) + 1e-9).floor() as usize;
    let b = (((f1 + f2) * n as f64) + 1e-9).floor() as usize;
    let b = b.clamp(a, n);
    Ok((
        data.subset(&idx[..a]),
        data.subset(&idx[a..b]),
        data.subset(&idx[b..]),
    ))
}

/// Mean of `(predict(x) - y)^2` over the dataset.
pub fn mse<F>(mut predict: F, data: &LabeledDataset) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if data.is_empty() {
        return Err(Error::invalid("mse of an empty dataset"));
    }
    let mut total = 0.0;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let e = predict(x)? - y;
        total += e * e;
    }
    Ok(total / data.len() as f64)
}
