use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::ftz::{load_tensor, save_tensor, RawTensor};
use crate::oracle::{BlackBoxOracle, LossGradient, WhiteBoxOracle, LOG_FLOOR};
use crate::rng::RandomSource;
use crate::smoothing::WeightMap;
use crate::tensor::{ImageShape, ImageTensor, LabelMap, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Context pixels on each side of the classified pixel.
    pub patch_radius: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            num_classes: 4,
            patch_radius: 2,
            hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn image_shape(&self) -> ImageShape {
        ImageShape::new(self.height, self.width, self.channels)
    }

    pub fn patch_len(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side * self.channels
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        Ok(())
    }
}

/// Per-pixel patch classifier: the `(2k+1)²·C` neighbourhood of each pixel
/// (edge-replicated at the border) goes through one rectified hidden layer
/// and a softmax over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySegModel {
    cfg: ModelConfig,
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
    pub(crate) final_loss: Option<f64>,
}

/// Parameter gradients, same shapes as the model's parameters.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ParamGrads {
    pub(crate) fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            w1: Array2::zeros((cfg.patch_len(), cfg.hidden)),
            b1: Array1::zeros(cfg.hidden),
            w2: Array2::zeros((cfg.hidden, cfg.num_classes)),
            b2: Array1::zeros(cfg.num_classes),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &ParamGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }
}

struct Forward {
    cols: Array2<f64>,
    hidden: Array2<f64>,
    probs: Array2<f64>,
}

pub(crate) struct Backward {
    pub loss: f64,
    pub input: Option<Vec<f64>>,
    pub params: Option<ParamGrads>,
}

impl ToySegModel {
    /// He-initialised weights, zero biases.
    pub fn new(cfg: ModelConfig, rng: &RandomSource) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng.rng();
        let mut init = |rows: usize, cols: usize| {
            let scale = (2.0 / rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut r);
                scale * z
            })
        };
        let w1 = init(cfg.patch_len(), cfg.hidden);
        let w2 = init(cfg.hidden, cfg.num_classes);
        Ok(Self {
            cfg,
            w1,
            b1: Array1::zeros(cfg.hidden),
            w2,
            b2: Array1::zeros(cfg.num_classes),
            final_loss: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Mean training loss of the last epoch, if the model was trained.
    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check_image(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != self.cfg.image_shape() {
            return Err(shape_err(self.cfg.image_shape(), x.shape()));
        }
        Ok(())
    }

    fn im2col(&self, x: &ImageTensor) -> Array2<f64> {
        let ModelConfig {
            height: h,
            width: w,
            channels: c,
            patch_radius: k,
            ..
        } = self.cfg;
        let data = x.data();
        let plen = self.cfg.patch_len();
        let mut cols = vec![0.0f64; h * w * plen];
        for i in 0..h {
            for j in 0..w {
                let row = &mut cols[(i * w + j) * plen..(i * w + j + 1) * plen];
                let mut idx = 0;
                for di in 0..=2 * k {
                    let si = (i + di).saturating_sub(k).min(h - 1);
                    for dj in 0..=2 * k {
                        let sj = (j + dj).saturating_sub(k).min(w - 1);
                        let base = (si * w + sj) * c;
                        for ch in 0..c {
                            row[idx] = data[base + ch] as f64;
                            idx += 1;
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((h * w, plen), cols).expect("im2col shape")
    }

    /// Scatter-adds patch gradients back onto image coordinates.
    fn col2im(&self, dcols: &Array2<f64>) -> Vec<f64> {
        let ModelConfig {
            height: h,
            width: w,
            channels: c,
            patch_radius: k,
            ..
        } = self.cfg;
        let mut out = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let row = dcols.row(i * w + j);
                let mut idx = 0;
                for di in 0..=2 * k {
                    let si = (i + di).saturating_sub(k).min(h - 1);
                    for dj in 0..=2 * k {
                        let sj = (j + dj).saturating_sub(k).min(w - 1);
                        let base = (si * w + sj) * c;
                        for ch in 0..c {
                            out[base + ch] += row[idx];
                            idx += 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn run(&self, x: &ImageTensor) -> Forward {
        let cols = self.im2col(x);
        let mut hidden = cols.dot(&self.w1);
        hidden += &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut logits = hidden.dot(&self.w2);
        logits += &self.b2;
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        Forward {
            cols,
            hidden,
            probs: logits,
        }
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ProbMap> {
        self.check_image(x)?;
        let f = self.run(x);
        Ok(ProbMap::from_raw(
            self.cfg.height,
            self.cfg.width,
            self.cfg.num_classes,
            f.probs.into_raw_vec_and_offset().0,
        ))
    }

    /// Loss `(1/N_pix)·Σ w_n·(−ln max(p_{n,y_n}, LOG_FLOOR))` and the
    /// requested gradients.
    pub(crate) fn backward(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
        want_input: bool,
        want_params: bool,
    ) -> Result<Backward> {
        self.check_image(x)?;
        if y.height() != self.cfg.height || y.width() != self.cfg.width {
            return Err(shape_err(
                format!("{}x{}", self.cfg.height, self.cfg.width),
                format!("{}x{}", y.height(), y.width()),
            ));
        }
        y.validate(self.cfg.num_classes)?;
        if let Some(w) = weights {
            if w.height() != self.cfg.height || w.width() != self.cfg.width {
                return Err(shape_err(
                    format!("{}x{}", self.cfg.height, self.cfg.width),
                    format!("{}x{}", w.height(), w.width()),
                ));
            }
        }
        let f = self.run(x);
        let npix = self.cfg.height * self.cfg.width;
        let inv_n = 1.0 / npix as f64;
        let mut dlogits = f.probs;
        let mut loss = 0.0;
        for (n, (mut row, &label)) in dlogits.rows_mut().into_iter().zip(y.labels()).enumerate() {
            let wn = weights.map_or(1.0, |w| w.weights()[n]);
            let label = label as usize;
            let p = row[label];
            loss += wn * -p.max(LOG_FLOOR).ln();
            if p < LOG_FLOOR || wn == 0.0 {
                row.fill(0.0);
            } else {
                row[label] -= 1.0;
                row *= wn * inv_n;
            }
        }
        loss *= inv_n;

        let mut dhidden = dlogits.dot(&self.w2.t());
        ndarray::Zip::from(&mut dhidden)
            .and(&f.hidden)
            .for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
        let input = want_input.then(|| self.col2im(&dhidden.dot(&self.w1.t())));
        let params = want_params.then(|| ParamGrads {
            w1: f.cols.t().dot(&dhidden),
            b1: dhidden.sum_axis(Axis(0)),
            w2: f.hidden.t().dot(&dlogits),
            b2: dlogits.sum_axis(Axis(0)),
        });
        Ok(Backward { loss, input, params })
    }

    /// Loss and `∂loss/∂x` by backpropagation.
    pub fn input_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient> {
        let b = self.backward(x, y, weights, true, false)?;
        Ok(LossGradient {
            loss: b.loss,
            gradient: b.input.expect("requested"),
        })
    }

    pub(crate) fn apply_update(&mut self, step: &ParamGrads, scale: f64) {
        self.w1.scaled_add(-scale, &step.w1);
        self.b1.scaled_add(-scale, &step.b1);
        self.w2.scaled_add(-scale, &step.w2);
        self.b2.scaled_add(-scale, &step.b2);
    }

    /// Rounds every parameter to `f32` precision, the precision checkpoints
    /// store, so that save/load is an exact round trip.
    pub fn snap_to_storage(&mut self) {
        let snap = |v: &mut f64| *v = *v as f32 as f64;
        self.w1.iter_mut().for_each(snap);
        self.b1.iter_mut().for_each(snap);
        self.w2.iter_mut().for_each(snap);
        self.b2.iter_mut().for_each(snap);
        if let Some(l) = self.final_loss.as_mut() {
            snap(l);
        }
    }

    /// Writes `w1.ftz`, `b1.ftz`, `w2.ftz`, `b2.ftz` and `meta.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let as_raw = |dims: Vec<u32>, it: &mut dyn Iterator<Item = &f64>| {
            RawTensor::new(dims, it.map(|&v| v as f32).collect())
        };
        let c = &self.cfg;
        let (p, h, k) = (c.patch_len() as u32, c.hidden as u32, c.num_classes as u32);
        save_tensor(dir.join("w1.ftz"), &as_raw(vec![p, h], &mut self.w1.iter())?)?;
        save_tensor(dir.join("b1.ftz"), &as_raw(vec![h], &mut self.b1.iter())?)?;
        save_tensor(dir.join("w2.ftz"), &as_raw(vec![h, k], &mut self.w2.iter())?)?;
        save_tensor(dir.join("b2.ftz"), &as_raw(vec![k], &mut self.b2.iter())?)?;
        let mut meta = format!(
            "height={}\nwidth={}\nchannels={}\nnum_classes={}\npatch_radius={}\nhidden={}\n",
            c.height, c.width, c.channels, c.num_classes, c.patch_radius, c.hidden
        );
        if let Some(l) = self.final_loss {
            meta.push_str(&format!("final_loss={:e}\n", l as f32));
        }
        fs::write(dir.join("meta.txt"), meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("meta.txt"))?;
        let meta: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad metadata line {l:?}")))
            })
            .collect::<Result<_>>()?;
        let get = |key: &str| -> Result<usize> {
            meta.get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("{key} is not an integer")))
        };
        let cfg = ModelConfig {
            height: get("height")?,
            width: get("width")?,
            channels: get("channels")?,
            num_classes: get("num_classes")?,
            patch_radius: get("patch_radius")?,
            hidden: get("hidden")?,
        };
        cfg.validate()?;
        let final_loss = meta
            .get("final_loss")
            .map(|v| v.parse::<f32>().map(|l| l as f64))
            .transpose()
            .map_err(|_| Error::Checkpoint("final_loss is not a number".into()))?;
        let matrix = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let raw = load_tensor(dir.join(name))?;
            if raw.dims != [rows as u32, cols as u32] {
                return Err(Error::Checkpoint(format!("{name} has dims {:?}", raw.dims)));
            }
            Ok(Array2::from_shape_vec((rows, cols), raw.data.iter().map(|&v| v as f64).collect())
                .expect("checked dims"))
        };
        let vector = |name: &str, len: usize| -> Result<Array1<f64>> {
            let raw = load_tensor(dir.join(name))?;
            if raw.dims != [len as u32] {
                return Err(Error::Checkpoint(format!("{name} has dims {:?}", raw.dims)));
            }
            Ok(raw.data.iter().map(|&v| v as f64).collect())
        };
        Ok(Self {
            cfg,
            w1: matrix("w1.ftz", cfg.patch_len(), cfg.hidden)?,
            b1: vector("b1.ftz", cfg.hidden)?,
            w2: matrix("w2.ftz", cfg.hidden, cfg.num_classes)?,
            b2: vector("b2.ftz", cfg.num_classes)?,
            final_loss,
        })
    }

    /// Random image of the model's input shape, for tests and probes.
    pub fn random_image<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageTensor {
        let shape = self.cfg.image_shape();
        let data = (0..shape.len()).map(|_| rng.random::<f32>()).collect();
        ImageTensor::new(shape, data).expect("values in [0, 1)")
    }
}

impl BlackBoxOracle for ToySegModel {
    fn image_shape(&self) -> ImageShape {
        self.cfg.image_shape()
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn predict(&self, x: &ImageTensor) -> Result<ProbMap> {
        self.forward(x)
    }
}

impl WhiteBoxOracle for ToySegModel {
    fn loss_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient> {
        self.input_gradient(x, y, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::mean_cross_entropy;

    fn small() -> ModelConfig {
        ModelConfig {
            height: 6,
            width: 5,
            channels: 2,
            num_classes: 3,
            patch_radius: 1,
            hidden: 8,
        }
    }

    fn setup(seed: u64) -> (ToySegModel, ImageTensor, LabelMap) {
        let model = ToySegModel::new(small(), &RandomSource::new(seed)).unwrap();
        let mut r = RandomSource::new(seed + 100).rng();
        let x = model.random_image(&mut r);
        let labels = (0..30).map(|_| r.random_range(0..3u32)).collect();
        (model, x, LabelMap::new(6, 5, labels).unwrap())
    }

    #[test]
    fn forward_is_a_probability_map() {
        let (model, x, _) = setup(1);
        let p = model.forward(&x).unwrap();
        for row in p.iter_pixels() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, model.forward(&x).unwrap());
    }

    #[test]
    fn loss_matches_black_box_cross_entropy() {
        let (model, x, y) = setup(2);
        let lg = model.input_gradient(&x, &y, None).unwrap();
        let ce = mean_cross_entropy(&model.forward(&x).unwrap(), &y, None).unwrap();
        assert!((lg.loss - ce).abs() < 1e-12);
        assert_eq!(lg.gradient.len(), x.len());
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let (model, x, y) = setup(3);
        let w = WeightMap::uniform(6, 5, 0.0).unwrap();
        let lg = model.input_gradient(&x, &y, Some(&w)).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn param_gradient_matches_finite_difference() {
        let (model, x, y) = setup(4);
        let g = model.backward(&x, &y, None, false, true).unwrap().params.unwrap();
        let h = 1e-5;
        for (i, j) in [(0, 0), (3, 5), (17, 7)] {
            let mut plus = model.clone();
            plus.w1[[i, j]] += h;
            let mut minus = model.clone();
            minus.w1[[i, j]] -= h;
            let lp = plus.backward(&x, &y, None, false, false).unwrap().loss;
            let lm = minus.backward(&x, &y, None, false, false).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g.w1[[i, j]]).abs() < 1e-6 * (1.0 + fd.abs()), "w1[{i},{j}]");
        }
        for c in 0..3 {
            let mut plus = model.clone();
            plus.b2[c] += h;
            let mut minus = model.clone();
            minus.b2[c] -= h;
            let fd = (plus.backward(&x, &y, None, false, false).unwrap().loss
                - minus.backward(&x, &y, None, false, false).unwrap().loss)
                / (2.0 * h);
            assert!((fd - g.b2[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (model, _, y) = setup(5);
        let wrong = ImageTensor::filled(ImageShape::new(5, 5, 2), 0.5).unwrap();
        assert!(model.forward(&wrong).is_err());
        assert!(model.input_gradient(&wrong, &y, None).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (mut model, _, _) = setup(6);
        model.final_loss = Some(0.123);
        model.snap_to_storage();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = ToySegModel::load(dir.path()).unwrap();
        assert_eq!(back, model);
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for f in ["w1.ftz", "b1.ftz", "w2.ftz", "b2.ftz", "meta.txt"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }
}
