use candle_core::Tensor;

use crate::device;
use crate::error::{arg_err, Result};

/// Dense row-major matrix (rows = time frames, cols = feature channels).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return arg_err(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return arg_err("ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// (target_len, source_len) weights for linear interpolation with the
/// first and last source frames aligned to the first and last targets.
pub fn interpolation_matrix(source_len: usize, target_len: usize) -> Result<Vec<f64>> {
    if source_len == 0 || target_len == 0 {
        return arg_err("interpolation lengths must be at least 1");
    }
    let mut w = vec![0.0; target_len * source_len];
    for m in 0..target_len {
        let pos = if target_len == 1 {
            0.0
        } else {
            m as f64 * (source_len - 1) as f64 / (target_len - 1) as f64
        };
        let lo = (pos.floor() as usize).min(source_len - 1);
        let frac = pos - lo as f64;
        w[m * source_len + lo] += 1.0 - frac;
        if frac > 0.0 {
            w[m * source_len + lo + 1] += frac;
        }
    }
    Ok(w)
}

pub fn interpolate_time(features: &Matrix, target_len: usize) -> Result<Matrix> {
    if features.rows == 0 || features.cols == 0 {
        return arg_err("cannot interpolate an empty feature matrix");
    }
    if target_len == features.rows {
        return Ok(features.clone());
    }
    let w = interpolation_matrix(features.rows, target_len)?;
    let mut out = vec![0.0; target_len * features.cols];
    for m in 0..target_len {
        for (n, &wn) in w[m * features.rows..(m + 1) * features.rows].iter().enumerate() {
            if wn != 0.0 {
                for c in 0..features.cols {
                    out[m * features.cols + c] += wn * features.get(n, c);
                }
            }
        }
    }
    Matrix::new(target_len, features.cols, out)
}

/// Differentiable variant over (batch, frames, channels).
pub fn interpolate_time_tensor(x: &Tensor, target_len: usize) -> Result<Tensor> {
    let (b, t1, d) = x.dims3()?;
    if t1 == 0 || d == 0 {
        return arg_err("cannot interpolate an empty feature tensor");
    }
    if t1 == target_len {
        return Ok(x.clone());
    }
    let w = Tensor::from_vec(interpolation_matrix(t1, target_len)?, (1, target_len, t1), &device())?
        .broadcast_as((b, target_len, t1))?
        .contiguous()?;
    Ok(w.matmul(&x.contiguous()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let out = interpolate_time(&m, 3).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn same_length_is_identity() {
        let m = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(interpolate_time(&m, 3).unwrap(), m);
    }

    #[test]
    fn empty_rejected() {
        let m = Matrix::new(0, 3, vec![]).unwrap();
        assert!(interpolate_time(&m, 4).is_err());
        assert!(interpolation_matrix(3, 0).is_err());
    }

    #[test]
    fn up_then_down_recovers_grid_points() {
        // 5 -> 9 places every source frame exactly on an even target frame.
        let data: Vec<f64> = (0..15).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
        let m = Matrix::new(5, 3, data).unwrap();
        let up = interpolate_time(&m, 9).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                assert!((up.get(2 * r, c) - m.get(r, c)).abs() < 1e-12);
            }
        }
        let back = interpolate_time(&up, 5).unwrap();
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tensor_matches_plain() {
        let m = Matrix::new(4, 2, vec![0.0, 1.0, 2.0, 3.0, -1.0, 5.0, 0.5, 0.25]).unwrap();
        let plain = interpolate_time(&m, 7).unwrap();
        let t = Tensor::from_vec(m.data().to_vec(), (1, 4, 2), &device()).unwrap();
        let out = interpolate_time_tensor(&t, 7).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in out.iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
