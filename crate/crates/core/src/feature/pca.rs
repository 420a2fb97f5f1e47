//! PCA by exact eigendecomposition of the sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const MAX_PCA_DIM: usize = 4096;
const PCA_MAGIC: &[u8; 4] = b"PCA1";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f32>,
    /// `rank × dim`, row-major, orthonormal rows.
    components: Vec<f32>,
    eigenvalues: Vec<f32>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn component(&self, i: usize) -> &[f32] {
        let d = self.input_dim();
        &self.components[i * d..(i + 1) * d]
    }

    /// Trains on row vectors of a common dimension. The covariance uses the
    /// `1/n` normalization, so the mean squared reconstruction error over the
    /// training set equals the sum of the discarded eigenvalues.
    pub fn train(vectors: &[impl AsRef<[f32]>], target_dim: usize) -> Result<Self> {
        let n = vectors.len();
        let d = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
        if target_dim == 0 || target_dim > d {
            return Err(Error::config(format!(
                "PCA target dim {target_dim} must be in 1..={d}"
            )));
        }
        if d > MAX_PCA_DIM {
            return Err(Error::config(format!(
                "PCA input dim {d} exceeds {MAX_PCA_DIM}"
            )));
        }
        if n < target_dim + 1 {
            return Err(Error::config(format!(
                "PCA to {target_dim} dims needs at least {} samples, got {n}",
                target_dim + 1
            )));
        }
        let mut mean = vec![0f64; d];
        for v in vectors {
            let v = v.as_ref();
            if v.len() != d {
                return Err(Error::dim(d, v.len()));
            }
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0f64; d];
        for v in vectors {
            for ((c, &x), m) in centered.iter_mut().zip(v.as_ref()).zip(&mean) {
                *c = x as f64 - m;
            }
            for i in 0..d {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let c = cov[(i, j)] / n as f64;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });

        let mut components = Vec::with_capacity(target_dim * d);
        let mut eigenvalues = Vec::with_capacity(target_dim);
        for &col in order.iter().take(target_dim) {
            let v = eig.eigenvectors.column(col);
            // Sign convention: the largest-magnitude entry is positive.
            let pivot = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            components.extend(v.iter().map(|&x| (sign * x) as f32));
            eigenvalues.push(eig.eigenvalues[col].max(0.0) as f32);
        }
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            components,
            eigenvalues,
        })
    }

    pub fn apply_into(&self, v: &[f32], out: &mut [f32]) -> Result<()> {
        let d = self.input_dim();
        if v.len() != d {
            return Err(Error::dim(d, v.len()));
        }
        debug_assert_eq!(out.len(), self.output_dim());
        for (o, row) in out.iter_mut().zip(self.components.chunks_exact(d)) {
            let mut acc = 0f32;
            for ((&x, &m), &c) in v.iter().zip(&self.mean).zip(row) {
                acc += (x - m) * c;
            }
            *o = acc;
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0f32; self.output_dim()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    /// Maps a reduced vector back into the input space.
    pub fn inverse(&self, reduced: &[f32]) -> Result<Vec<f32>> {
        if reduced.len() != self.output_dim() {
            return Err(Error::dim(self.output_dim(), reduced.len()));
        }
        let d = self.input_dim();
        let mut out = self.mean.clone();
        for (&y, row) in reduced.iter().zip(self.components.chunks_exact(d)) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += y * c;
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(PCA_MAGIC, 1);
        w.u32(self.input_dim() as u32);
        w.u32(self.output_dim() as u32);
        w.f32s(&self.mean);
        w.f32s(&self.eigenvalues);
        w.f32s(&self.components);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(PCA_MAGIC, 1)?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        if k > d || d > MAX_PCA_DIM {
            return Err(Error::Format(format!("bad PCA shape {k}x{d}")));
        }
        let mean = r.f32s(d)?;
        let eigenvalues = r.f32s(k)?;
        let components = r.f32s(k * d)?;
        r.finish()?;
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }
}
