//! Pixel accuracy and mean IoU.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, ProbMap};

fn check_pairs(pred: &[LabelMap], truth: &[LabelMap]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(shape_err(
            format!("{} predictions", truth.len()),
            format!("{} predictions", pred.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (p, t) in pred.iter().zip(truth) {
        if !p.same_shape(t) {
            return Err(shape_err(
                format!("{}x{}", t.height(), t.width()),
                format!("{}x{}", p.height(), p.width()),
            ));
        }
    }
    Ok(())
}

/// Correct pixels over total pixels, pooled across the whole set.
pub fn pix_acc(pred: &[LabelMap], truth: &[LabelMap]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let (hits, total) = pred.iter().zip(truth).fold((0usize, 0usize), |(h, n), (p, t)| {
        let hits = p.labels().iter().zip(t.labels()).filter(|(a, b)| a == b).count();
        (h + hits, n + t.len())
    });
    Ok(hits as f64 / total as f64)
}

/// Running sum of fractions, kept exact while it fits in `u128` so that
/// small hand-checkable cases come out correctly rounded.
struct FractionSum {
    exact: Option<(u128, u128)>,
    approx: f64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FractionSum {
    fn new() -> Self {
        Self {
            exact: Some((0, 1)),
            approx: 0.0,
        }
    }

    fn add(&mut self, num: usize, den: usize) {
        let (n, d) = (num as u128, den as u128);
        self.approx += num as f64 / den as f64;
        self.exact = self.exact.and_then(|(sn, sd)| {
            let g = gcd(sd, d);
            let lhs = sn.checked_mul(d / g)?;
            let rhs = n.checked_mul(sd / g)?;
            let num = lhs.checked_add(rhs)?;
            let den = sd.checked_mul(d / g)?;
            let g = gcd(num, den).max(1);
            Some((num / g, den / g))
        });
    }

    fn mean(&self, count: usize) -> f64 {
        match self.exact.and_then(|(n, d)| Some((n, d.checked_mul(count as u128)?))) {
            Some((n, d)) if n < (1 << 53) && d < (1 << 53) => n as f64 / d as f64,
            _ => self.approx / count as f64,
        }
    }
}

/// Mean of `|P_c ∩ G_c| / |P_c ∪ G_c|` over every (image, class) pair whose
/// union is nonempty.
pub fn miou(pred: &[LabelMap], truth: &[LabelMap], num_classes: usize) -> Result<f64> {
    check_pairs(pred, truth)?;
    let mut sum = FractionSum::new();
    let mut terms = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        p.validate(num_classes)?;
        t.validate(num_classes)?;
        let mut inter = vec![0usize; num_classes];
        let mut union = vec![0usize; num_classes];
        for (&a, &b) in p.labels().iter().zip(t.labels()) {
            let (a, b) = (a as usize, b as usize);
            if a == b {
                inter[a] += 1;
                union[a] += 1;
            } else {
                union[a] += 1;
                union[b] += 1;
            }
        }
        for c in 0..num_classes {
            if union[c] > 0 {
                sum.add(inter[c], union[c]);
                terms += 1;
            }
        }
    }
    Ok(sum.mean(terms))
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labels(probs: &ProbMap) -> LabelMap {
    let labels = probs
        .iter_pixels()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::new(probs.height(), probs.width(), labels).expect("probability map has valid shape")
}
