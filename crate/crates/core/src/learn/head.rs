use crate::error::{Error, Result};
use crate::grid::{FeatureStack, LabelMap, IGNORE_LABEL};
use crate::pool::DenseScoreMap;

/// Per-pixel affine map from `C` feature channels to `ncl` class scores.
///
/// Parameters are stored row by row as `[W_k0 .. W_k(C-1), b_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    classes: usize,
    channels: usize,
    params: Vec<f64>,
}

impl LinearHead {
    /// All-zero parameters.
    pub fn new(classes: usize, channels: usize) -> Self {
        Self {
            classes,
            channels,
            params: vec![0.0; classes * (channels + 1)],
        }
    }

    pub fn from_params(classes: usize, channels: usize, params: Vec<f64>) -> Result<Self> {
        if classes == 0 || channels == 0 || params.len() != classes * (channels + 1) {
            return Err(Error::ShapeMismatch(format!(
                "linear head ({classes} classes, {channels} channels) got {} parameters",
                params.len()
            )));
        }
        if let Some(v) = params.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite head parameter {v}")));
        }
        Ok(Self {
            classes,
            channels,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight(&self, class: usize, channel: usize) -> f64 {
        self.params[class * (self.channels + 1) + channel]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.params[class * (self.channels + 1) + self.channels]
    }

    fn check_input(&self, input: &FeatureStack) -> Result<()> {
        if input.channels() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} channels, features have {}",
                self.channels,
                input.channels()
            )));
        }
        Ok(())
    }

    /// Class scores `(N, ncl, H, W)` for every pixel of every frame.
    pub fn apply(&self, input: &FeatureStack) -> Result<FeatureStack> {
        self.check_input(input)?;
        let [n, ch, h, w] = input.shape();
        let plane = h * w;
        let mut out = vec![0.0; n * self.classes * plane];
        for i in 0..n {
            let frame = input.frame(i);
            for k in 0..self.classes {
                let dst = &mut out[(i * self.classes + k) * plane..][..plane];
                dst.fill(self.bias(k));
                for c in 0..ch {
                    let wkc = self.weight(k, c);
                    for (d, &x) in dst.iter_mut().zip(&frame[c * plane..(c + 1) * plane]) {
                        *d += wkc * x;
                    }
                }
            }
        }
        FeatureStack::new(n, self.classes, h, w, out)
    }

    /// Parameter gradient given `grad_out` of shape `(N, ncl, H, W)`.
    pub fn backward(&self, input: &FeatureStack, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let [n, ch, h, w] = input.shape();
        let plane = h * w;
        if grad_out.len() != n * self.classes * plane {
            return Err(Error::ShapeMismatch(format!(
                "head gradient has {} values, expected {}",
                grad_out.len(),
                n * self.classes * plane
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        for i in 0..n {
            let frame = input.frame(i);
            for k in 0..self.classes {
                let g = &grad_out[(i * self.classes + k) * plane..][..plane];
                let row = k * (ch + 1);
                for c in 0..ch {
                    let x = &frame[c * plane..(c + 1) * plane];
                    grad[row + c] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                grad[row + ch] += g.iter().sum::<f64>();
            }
        }
        Ok(grad)
    }
}

/// Mean softmax cross-entropy over labeled pixels and its gradient with
/// respect to `scores`.
pub fn cross_entropy(scores: &DenseScoreMap, labels: &LabelMap) -> Result<(f64, Vec<f64>)> {
    let (ncl, h, w) = (scores.channels(), scores.height(), scores.width());
    if labels.height() != h || labels.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "scores are {h}x{w}, labels are {}x{}",
            labels.height(),
            labels.width()
        )));
    }
    labels.validate(ncl)?;
    let count = labels.labels().iter().filter(|&&l| l != IGNORE_LABEL).count();
    if count == 0 {
        return Err(Error::AllPixelsIgnored);
    }
    let plane = h * w;
    let data = scores.data();
    let mut grad = vec![0.0; data.len()];
    let mut loss = 0.0;
    let mut probs = vec![0.0; ncl];
    for (q, &label) in labels.labels().iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let max = (0..ncl).map(|k| data[k * plane + q]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (data[k * plane + q] - max).exp();
            z += *p;
        }
        loss += z.ln() + max - data[label as usize * plane + q];
        for (k, p) in probs.iter().enumerate() {
            let onehot = if k == label as usize { 1.0 } else { 0.0 };
            grad[k * plane + q] = (p / z - onehot) / count as f64;
        }
    }
    Ok((loss / count as f64, grad))
}
