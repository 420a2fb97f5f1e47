//! Linear embedding trained with the triplet hinge loss
//! `max(0, |f(q) - f(p)|² - |f(q) - f(n)|² + margin)`, where
//! `f(x) = W x / |W x|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: Vec<f32>,
    pub positive: Vec<f32>,
    pub negative: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletEmbeddingModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub margin: f64,
    /// `output_dim × input_dim`, row-major.
    pub projection: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletTrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TripletTrainConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            learning_rate: 0.1,
            epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedTriplet {
    pub model: TripletEmbeddingModel,
    /// Batch loss at the start of every epoch, plus the final loss.
    pub loss_history: Vec<f64>,
}

struct Projected {
    unit: Vec<f64>,
    norm: f64,
}

impl TripletEmbeddingModel {
    /// Gaussian initialization with variance `1 / input_dim`.
    pub fn init(input_dim: usize, output_dim: usize, margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim.max(1) as f64).sqrt()).unwrap();
        let projection = (0..input_dim * output_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            input_dim,
            output_dim,
            margin,
            projection,
        }
    }

    fn project(&self, x: &[f32]) -> Result<Projected> {
        if x.len() != self.input_dim {
            return Err(Error::dim(self.input_dim, x.len()));
        }
        let u: Vec<f64> = self
            .projection
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(x).map(|(w, &v)| w * v as f64).sum())
            .collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = if norm > 0.0 {
            u.iter().map(|v| v / norm).collect()
        } else {
            u
        };
        Ok(Projected { unit, norm })
    }

    /// Unit-norm embedding of `x`.
    pub fn embed(&self, x: &[f32]) -> Result<Vec<f32>> {
        Ok(self
            .project(x)?
            .unit
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }

    /// Accumulates `scale * d(f(x))/dW · g` into `grad`.
    fn backprop(&self, p: &Projected, x: &[f32], g: &[f64], grad: &mut [f64]) {
        if p.norm == 0.0 {
            return;
        }
        let fg: f64 = p.unit.iter().zip(g).map(|(f, g)| f * g).sum();
        for (i, row) in grad.chunks_exact_mut(self.input_dim).enumerate() {
            let du = (g[i] - p.unit[i] * fg) / p.norm;
            if du == 0.0 {
                continue;
            }
            for (r, &v) in row.iter_mut().zip(x) {
                *r += du * v as f64;
            }
        }
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Summed hinge loss over the batch and its exact subgradient with respect
/// to the projection. Terms whose hinge argument is `<= 0` contribute nothing.
pub fn triplet_loss(model: &TripletEmbeddingModel, batch: &[Triplet]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::config("empty triplet batch"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.projection.len()];
    for t in batch {
        let q = model.project(&t.query)?;
        let p = model.project(&t.positive)?;
        let n = model.project(&t.negative)?;
        let arg = sq(&q.unit, &p.unit) - sq(&q.unit, &n.unit) + model.margin;
        if arg <= 0.0 {
            continue;
        }
        loss += arg;
        // d/dfq = 2(fn - fp), d/dfp = -2(fq - fp), d/dfn = 2(fq - fn)
        let gq: Vec<f64> = n
            .unit
            .iter()
            .zip(&p.unit)
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        let gp: Vec<f64> = q
            .unit
            .iter()
            .zip(&p.unit)
            .map(|(a, b)| -2.0 * (a - b))
            .collect();
        let gn: Vec<f64> = q
            .unit
            .iter()
            .zip(&n.unit)
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        model.backprop(&q, &t.query, &gq, &mut grad);
        model.backprop(&p, &t.positive, &gp, &mut grad);
        model.backprop(&n, &t.negative, &gn, &mut grad);
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent on the mean loss. Returns the lowest-loss
/// model seen, so the final loss never exceeds the initial one.
pub fn triplet_train(
    triplets: &[Triplet],
    output_dim: usize,
    config: &TripletTrainConfig,
) -> Result<TrainedTriplet> {
    let first = triplets
        .first()
        .ok_or_else(|| Error::config("no triplets"))?;
    if output_dim == 0 {
        return Err(Error::config("output dim must be positive"));
    }
    if config.margin < 0.0 {
        return Err(Error::config("margin must be non-negative"));
    }
    let mut model =
        TripletEmbeddingModel::init(first.query.len(), output_dim, config.margin, config.seed);
    let scale = config.learning_rate / triplets.len() as f64;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut best = (f64::INFINITY, model.clone());
    for epoch in 0..=config.epochs {
        let (loss, grad) = triplet_loss(&model, triplets)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, model.clone());
        }
        if epoch == config.epochs || loss == 0.0 {
            break;
        }
        for (w, g) in model.projection.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }
    log::debug!("triplet training: {} -> {}", history[0], best.0);
    Ok(TrainedTriplet {
        model: best.1,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model() -> TripletEmbeddingModel {
        // Identity on 2-D input.
        TripletEmbeddingModel {
            input_dim: 2,
            output_dim: 2,
            margin: 0.2,
            projection: vec![1.0, 0.0, 0.0, 1.0],
        }
    }

    /// Unit vector at angle whose squared chord distance from (1, 0) is `d2`.
    fn at_chord(d2: f64) -> Vec<f32> {
        let cos = 1.0 - d2 / 2.0;
        let sin = (1.0 - cos * cos).sqrt();
        vec![cos as f32, sin as f32]
    }

    #[test]
    fn inactive_hinge_gives_zero() {
        let mut m = unit_model();
        m.margin = 0.2;
        let t = Triplet {
            query: vec![1.0, 0.0],
            positive: vec![1.0, 0.0],
            negative: at_chord(0.3),
        };
        let (loss, grad) = triplet_loss(&m, &[t]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn direct_arithmetic() {
        let m = unit_model();
        let t = Triplet {
            query: vec![1.0, 0.0],
            positive: at_chord(0.1),
            negative: at_chord(0.15),
        };
        let (loss, _) = triplet_loss(&m, &[t]).unwrap();
        assert!((loss - 0.15).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = TripletEmbeddingModel::init(5, 3, 0.2, 9);
        let e = m.embed(&[0.3, -1.0, 2.0, 0.5, 0.1]).unwrap();
        let n: f32 = e.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let m = unit_model();
        assert!(triplet_loss(&m, &[]).is_err());
        let bad = Triplet {
            query: vec![1.0],
            positive: vec![1.0, 0.0],
            negative: vec![0.0, 1.0],
        };
        assert!(matches!(
            triplet_loss(&m, &[bad]),
            Err(Error::DimMismatch { .. })
        ));
        let t = Triplet {
            query: vec![1.0, 0.0],
            positive: vec![0.0, 1.0],
            negative: vec![1.0, 0.1],
        };
        let cfg = TripletTrainConfig {
            learning_rate: f64::INFINITY,
            epochs: 3,
            ..Default::default()
        };
        assert!(matches!(
            triplet_train(&[t], 2, &cfg),
            Err(Error::Divergence(_))
        ));
    }
}
