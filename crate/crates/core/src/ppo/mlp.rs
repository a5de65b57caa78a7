use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-layer perceptron: `out = W2 · relu(W1 · x + b1) + b2`.
///
/// `w1` is stored input-major (`w1[i * hidden + h]`) so the columns touched
/// by a sparse binary input are contiguous; `w2` is output-major
/// (`w2[o * hidden + h]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations cached for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            inputs,
            hidden,
            outputs,
            w1: vec![0.0; inputs * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; outputs * hidden],
            b2: vec![0.0; outputs],
        }
    }

    /// Orthogonal initialization with the given per-layer gains; zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(inputs, hidden, outputs);
        // w1 as a hidden x inputs matrix; transpose into input-major storage
        let w1 = orthogonal_matrix(hidden, inputs, hidden_gain, rng);
        for h in 0..hidden {
            for i in 0..inputs {
                net.w1[i * hidden + h] = w1[h * inputs + i];
            }
        }
        net.w2 = orthogonal_matrix(outputs, hidden, output_gain, rng);
        net
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.inputs {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.inputs,
                got: x.len(),
            });
        }
        let mut pre = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let col = &self.w1[i * self.hidden..(i + 1) * self.hidden];
            for (p, w) in pre.iter_mut().zip(col) {
                *p += xi * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let out = (0..self.outputs)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        Ok(Activations { pre, hidden, out })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂out`.
    pub fn backward(&self, x: &[f64], act: &Activations, d_out: &[f64], grad: &mut Mlp) {
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b2[o] += g;
            let row = o * self.hidden..(o + 1) * self.hidden;
            for ((gw, w), (dh, h)) in grad.w2[row.clone()]
                .iter_mut()
                .zip(&self.w2[row])
                .zip(d_hidden.iter_mut().zip(&act.hidden))
            {
                *gw += g * h;
                *dh += g * w;
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&act.pre)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        for (gb, d) in grad.b1.iter_mut().zip(&d_pre) {
            *gb += d;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let col = &mut grad.w1[i * self.hidden..(i + 1) * self.hidden];
            for (gw, d) in col.iter_mut().zip(&d_pre) {
                *gw += xi * d;
            }
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// `rows x cols` matrix (row-major) with orthonormal rows or columns,
/// whichever is the smaller set, scaled by `gain`.
fn orthogonal_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (count, dim) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a draw lying in the span of earlier vectors is redrawn
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for (k, v) in basis.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            let (r, c) = if rows <= cols { (k, j) } else { (j, k) };
            m[r * cols + c] = gain * x;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn orthogonal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (rows, cols) in [(3, 8), (8, 3), (5, 5)] {
            let m = orthogonal_matrix(rows, cols, 2.0, &mut rng);
            let (count, dim) = if rows <= cols {
                (rows, cols)
            } else {
                (cols, rows)
            };
            let get = |k: usize, j: usize| {
                if rows <= cols {
                    m[k * cols + j]
                } else {
                    m[j * cols + k]
                }
            };
            for a in 0..count {
                for b in 0..count {
                    let dot: f64 = (0..dim).map(|j| get(a, j) * get(b, j)).sum();
                    let expected = if a == b { 4.0 } else { 0.0 };
                    assert!(
                        (dot - expected).abs() < 1e-10,
                        "{rows}x{cols} ({a},{b}) {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::orthogonal(5, 7, 3, 1.0, 1.0, &mut rng);
        net.b1
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
        net.b2
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x = [1.0, 0.0, 0.5, -2.0, 0.0];
        let act = net.forward(&x).unwrap();
        for o in 0..3 {
            let mut y = net.b2[o];
            for h in 0..7 {
                let mut z = net.b1[h];
                for (i, xi) in x.iter().enumerate() {
                    z += net.w1[i * 7 + h] * xi;
                }
                y += net.w2[o * 7 + h] * z.max(0.0);
            }
            assert!((y - act.out[o]).abs() < 1e-12);
        }
        assert!(net.forward(&[1.0; 4]).is_err());
    }
}
