use crate::error::{shape_err, Error, Result};
use crate::oracle::{BlackBoxOracle, LossGradient, WhiteBoxOracle, LOG_FLOOR};
use crate::smoothing::WeightMap;
use crate::tensor::{ImageShape, ImageTensor, LabelMap, ProbMap};

/// Each pixel is classified from its own channel values alone by a shared
/// affine map followed by a softmax. Simple enough that smoothed outputs can
/// be pinned down by brute-force sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPixelModel {
    shape: ImageShape,
    /// `weights[c][ch]`
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearPixelModel {
    pub fn new(shape: ImageShape, weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 || bias.len() != weights.len() {
            return Err(Error::InvalidArgument("need >= 2 classes with one bias each".into()));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != shape.channels) {
            return Err(shape_err(shape.channels, row.len()));
        }
        Ok(Self {
            shape,
            weights,
            bias,
        })
    }

    fn logits(&self, px: &[f32]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(px).map(|(a, &v)| a * v as f64).sum::<f64>())
            .collect()
    }

    fn softmax(z: &mut [f64]) {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in z.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        z.iter_mut().for_each(|v| *v /= s);
    }
}

impl BlackBoxOracle for LinearPixelModel {
    fn image_shape(&self) -> ImageShape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, x: &ImageTensor) -> Result<ProbMap> {
        if x.shape() != self.shape {
            return Err(shape_err(self.shape, x.shape()));
        }
        let mut probs = Vec::with_capacity(self.shape.pixels() * self.weights.len());
        for px in x.data().chunks_exact(self.shape.channels) {
            let mut z = self.logits(px);
            Self::softmax(&mut z);
            probs.extend(z);
        }
        Ok(ProbMap::from_raw(self.shape.height, self.shape.width, self.weights.len(), probs))
    }
}

impl WhiteBoxOracle for LinearPixelModel {
    fn loss_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient> {
        let probs = self.predict(x)?;
        probs.check_labels(y)?;
        let npix = self.shape.pixels() as f64;
        let c = self.shape.channels;
        let mut gradient = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (n, (row, &label)) in probs.iter_pixels().zip(y.labels()).enumerate() {
            let wn = weights.map_or(1.0, |w| w.weights()[n]);
            let p = row[label as usize];
            loss += wn * -p.max(LOG_FLOOR).ln();
            if p < LOG_FLOOR || wn == 0.0 {
                continue;
            }
            for (k, (pk, wk)) in row.iter().zip(&self.weights).enumerate() {
                let d = wn * (pk - if k == label as usize { 1.0 } else { 0.0 }) / npix;
                for ch in 0..c {
                    gradient[n * c + ch] += d * wk[ch];
                }
            }
        }
        Ok(LossGradient {
            loss: loss / npix,
            gradient,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_logit() {
        let m = LinearPixelModel::new(
            ImageShape::new(1, 1, 1),
            vec![vec![4.0], vec![-4.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        let x = ImageTensor::filled(ImageShape::new(1, 1, 1), 0.5).unwrap();
        let p = m.predict(&x).unwrap();
        let expect = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((p.probs()[0] - expect).abs() < 1e-12);
    }

    fn up_step(v: f32, h: f64) -> f64 {
        (v + h as f32) as f64
    }

    fn dn_step(v: f32, h: f64) -> f64 {
        (v - h as f32) as f64
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let shape = ImageShape::new(2, 1, 2);
        let m = LinearPixelModel::new(
            shape,
            vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.0, 0.0]],
            vec![0.1, -0.2, 0.0],
        )
        .unwrap();
        let x = ImageTensor::new(shape, vec![0.2, 0.7, 0.5, 0.4]).unwrap();
        let y = LabelMap::new(2, 1, vec![2, 0]).unwrap();
        let g = m.loss_gradient(&x, &y, None).unwrap();
        let h = 1e-3;
        for i in 0..4 {
            let mut up = x.data().to_vec();
            let mut dn = x.data().to_vec();
            up[i] += h as f32;
            dn[i] -= h as f32;
            let lu = m.loss_gradient(&ImageTensor::new(shape, up).unwrap(), &y, None).unwrap().loss;
            let ld = m.loss_gradient(&ImageTensor::new(shape, dn).unwrap(), &y, None).unwrap().loss;
            let fd = (lu - ld) / (up_step(x.data()[i], h) - dn_step(x.data()[i], h));
            assert!((fd - g.gradient[i]).abs() < 1e-4, "coord {i}: {fd} vs {}", g.gradient[i]);
        }
    }
}
