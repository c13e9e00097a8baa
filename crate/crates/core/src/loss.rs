//! Training objectives.
//!
//! The total objective is `α·L_seg + β·L_bound + γ·L_refine` where the first two
//! are binary cross entropies and the refine term compares gradient fields of
//! the image and the predicted confidence map inside the boundary band.
//!
//! Values are computed in `f64`. Every differentiable term has a matching
//! backward routine; the image field is treated as data and gets no gradient.

#[allow(unused_imports)]
use num_traits::Float;

use crate::gradient::{prediction_gradient, sobel_adjoint, GradientField, FLAT_EPSILON};
use crate::raster::{minmax_normalize_backward, Grid};
use crate::{Error, Result};

/// Predictions are clamped into `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Segmentation BCE weight.
    pub alpha: f64,
    /// Boundary-attention BCE weight.
    pub beta: f64,
    /// Refine loss weight.
    pub gamma: f64,
    /// Direction term weight inside the refine loss.
    pub gamma_cos: f64,
    /// Magnitude term weight inside the refine loss.
    pub gamma_mag: f64,
    /// Image/prediction magnitude balance in the hinge.
    pub lambda: f64,
    /// Attention sigmoid temperature.
    pub temperature: f64,
    /// Canonical boundary width in pixels.
    pub canonical_width: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.3,
            gamma: 0.1,
            gamma_cos: 0.5,
            gamma_mag: 0.5,
            lambda: 1.5,
            temperature: 4.0,
            canonical_width: 50,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.alpha,
            self.beta,
            self.gamma,
            self.gamma_cos,
            self.gamma_mag,
            self.lambda,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidValue("loss weights must be finite and non-negative"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidValue("temperature must be positive"));
        }
        if self.canonical_width == 0 {
            return Err(Error::InvalidValue("canonical width must be positive"));
        }
        Ok(())
    }
}

/// Per-term loss values for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub seg: f64,
    pub bound: f64,
    pub cos: f64,
    pub mag: f64,
    pub refine: f64,
    pub total: f64,
}

impl LossReport {
    /// Combines term values. The refine term is always reported but only
    /// enters `total` when `refine_enabled`.
    pub fn compose(
        seg: f64,
        bound: f64,
        cos: f64,
        mag: f64,
        weights: &LossWeights,
        refine_enabled: bool,
    ) -> Self {
        let refine = weights.gamma_cos * cos + weights.gamma_mag * mag;
        let mut total = weights.alpha * seg + weights.beta * bound;
        if refine_enabled {
            total += weights.gamma * refine;
        }
        Self {
            seg,
            bound,
            cos,
            mag,
            refine,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.seg, self.bound, self.cos, self.mag, self.refine, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Logistic function evaluated without overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `1 / (1 + exp(-x / T))`.
pub fn temperature_sigmoid(x: &Grid, temperature: f64) -> Grid {
    x.map(|v| sigmoid(v / temperature))
}

/// Mean binary cross entropy of clamped probabilities.
pub fn bce(pred: &Grid, target: &Grid) -> Result<f64> {
    pred.check_same_dims(target)?;
    let n = pred.len().max(1) as f64;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`bce`] with respect to `pred` (zero where the clamp is active).
pub fn bce_grad(pred: &Grid, target: &Grid) -> Result<Grid> {
    pred.check_same_dims(target)?;
    let n = pred.len().max(1) as f64;
    let (h, w) = pred.dims();
    let mut grad = Grid::zeros(h, w);
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        if p > BCE_EPSILON && p < 1.0 - BCE_EPSILON {
            *g = (-(t / p) + (1.0 - t) / (1.0 - p)) / n;
        }
    }
    Ok(grad)
}

/// Mean BCE of `sigmoid(logits / T)` against `target`, and its gradient with
/// respect to `logits`. Equal to [`bce`] on the same probabilities wherever the
/// clamp is inactive, but never saturates.
pub fn bce_with_logits(logits: &Grid, target: &Grid, temperature: f64) -> Result<(f64, Grid)> {
    logits.check_same_dims(target)?;
    let n = logits.len().max(1) as f64;
    let (h, w) = logits.dims();
    let mut grad = Grid::zeros(h, w);
    let mut sum = 0.0;
    for ((g, &z), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(logits.as_slice())
        .zip(target.as_slice())
    {
        let x = z / temperature;
        // softplus(x) - t*x
        sum += x.max(0.0) + (-x.abs()).exp().ln_1p() - t * x;
        *g = (sigmoid(x) - t) / (n * temperature);
    }
    Ok((sum / n, grad))
}

fn check_fields(a: &GradientField, b: &GradientField) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(())
}

/// Per-pixel direction loss `(1 - |ν_img · ν_pred|) · m_pred`.
pub fn cos_loss(img: &GradientField, pred: &GradientField) -> Result<Grid> {
    check_fields(img, pred)?;
    let (h, w) = img.dims();
    Ok(Grid::from_fn(h, w, |y, x| {
        let dot = img.direction_x()[(y, x)] * pred.direction_x()[(y, x)]
            + img.direction_y()[(y, x)] * pred.direction_y()[(y, x)];
        (1.0 - dot.abs()) * pred.magnitude()[(y, x)]
    }))
}

/// Per-pixel magnitude hinge `max(λ·m_img - m_pred, 0)`.
pub fn mag_loss(img: &GradientField, pred: &GradientField, lambda: f64) -> Result<Grid> {
    check_fields(img, pred)?;
    let (h, w) = img.dims();
    Ok(Grid::from_fn(h, w, |y, x| {
        (lambda * img.magnitude()[(y, x)] - pred.magnitude()[(y, x)]).max(0.0)
    }))
}

/// Gradients of `Σ upstream · cos_loss` with respect to the prediction's raw
/// Sobel responses `(G_x, G_y)`.
pub fn cos_loss_backward(
    img: &GradientField,
    pred: &GradientField,
    upstream: &Grid,
) -> Result<(Grid, Grid)> {
    check_fields(img, pred)?;
    let (h, w) = img.dims();
    let mut dx = Grid::zeros(h, w);
    let mut dy = Grid::zeros(h, w);
    for i in 0..upstream.len() {
        let u = upstream.as_slice()[i];
        let m = pred.magnitude().as_slice()[i];
        if u == 0.0 || m == 0.0 {
            continue;
        }
        let (gx, gy) = (pred.gx().as_slice()[i], pred.gy().as_slice()[i]);
        // d m / d G
        let mut ax = gx / m;
        let mut ay = gy / m;
        if m > FLAT_EPSILON {
            // |ν_img · ν_pred| · m_pred == |ν_img · G_pred|
            let (nx, ny) = (img.direction_x().as_slice()[i], img.direction_y().as_slice()[i]);
            let s = (nx * gx + ny * gy).signum();
            if nx != 0.0 || ny != 0.0 {
                ax -= s * nx;
                ay -= s * ny;
            }
        }
        dx.as_mut_slice()[i] = u * ax;
        dy.as_mut_slice()[i] = u * ay;
    }
    Ok((dx, dy))
}

/// Gradients of `Σ upstream · mag_loss` with respect to `(G_x, G_y)`.
pub fn mag_loss_backward(
    img: &GradientField,
    pred: &GradientField,
    lambda: f64,
    upstream: &Grid,
) -> Result<(Grid, Grid)> {
    check_fields(img, pred)?;
    let (h, w) = img.dims();
    let mut dx = Grid::zeros(h, w);
    let mut dy = Grid::zeros(h, w);
    for i in 0..upstream.len() {
        let u = upstream.as_slice()[i];
        let m = pred.magnitude().as_slice()[i];
        if u == 0.0 || m == 0.0 || lambda * img.magnitude().as_slice()[i] - m <= 0.0 {
            continue;
        }
        dx.as_mut_slice()[i] = -u * pred.gx().as_slice()[i] / m;
        dy.as_mut_slice()[i] = -u * pred.gy().as_slice()[i] / m;
    }
    Ok((dx, dy))
}

/// Boundary-band means of the direction and magnitude terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineTerms {
    pub cos: f64,
    pub mag: f64,
}

impl RefineTerms {
    pub fn combine(&self, gamma_cos: f64, gamma_mag: f64) -> f64 {
        gamma_cos * self.cos + gamma_mag * self.mag
    }
}

fn band_size(m_bound: &Grid) -> usize {
    m_bound.as_slice().iter().filter(|&&v| v > 0.5).count()
}

/// Means of `cos_loss` and `mag_loss` over the boundary band; zero for an
/// empty band.
pub fn refine_terms(
    img: &GradientField,
    pred: &GradientField,
    m_bound: &Grid,
    lambda: f64,
) -> Result<RefineTerms> {
    check_fields(img, pred)?;
    if m_bound.dims() != img.dims() {
        return Err(Error::ShapeMismatch {
            expected: img.dims(),
            actual: m_bound.dims(),
        });
    }
    let n = band_size(m_bound);
    if n == 0 {
        return Ok(RefineTerms { cos: 0.0, mag: 0.0 });
    }
    let c = cos_loss(img, pred)?;
    let m = mag_loss(img, pred, lambda)?;
    let mut cos = 0.0;
    let mut mag = 0.0;
    for (i, &b) in m_bound.as_slice().iter().enumerate() {
        if b > 0.5 {
            cos += c.as_slice()[i];
            mag += m.as_slice()[i];
        }
    }
    Ok(RefineTerms {
        cos: cos / n as f64,
        mag: mag / n as f64,
    })
}

/// `mean over M_bound of (γ₁·L_cos + γ₂·L_mag)`.
pub fn refine_loss(
    img: &GradientField,
    pred: &GradientField,
    m_bound: &Grid,
    gamma_cos: f64,
    gamma_mag: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(refine_terms(img, pred, m_bound, lambda)?.combine(gamma_cos, gamma_mag))
}

/// Gradient of [`refine_loss`] with respect to the map the prediction field
/// was computed from (before any normalization).
pub fn refine_loss_backward(
    img: &GradientField,
    pred: &GradientField,
    m_bound: &Grid,
    gamma_cos: f64,
    gamma_mag: f64,
    lambda: f64,
) -> Result<Grid> {
    let (h, w) = img.dims();
    let n = band_size(m_bound);
    if n == 0 {
        return Ok(Grid::zeros(h, w));
    }
    let scale = 1.0 / n as f64;
    let cos_up = m_bound.map(|b| if b > 0.5 { gamma_cos * scale } else { 0.0 });
    let mag_up = m_bound.map(|b| if b > 0.5 { gamma_mag * scale } else { 0.0 });
    let (cx, cy) = cos_loss_backward(img, pred, &cos_up)?;
    let (mx, my) = mag_loss_backward(img, pred, lambda, &mag_up)?;
    let gx = Grid::from_fn(h, w, |y, x| cx[(y, x)] + mx[(y, x)]);
    let gy = Grid::from_fn(h, w, |y, x| cy[(y, x)] + my[(y, x)]);
    sobel_adjoint(&gx, &gy)
}

/// Total loss over probability maps.
///
/// `pred_field` must be the gradient field of the (normalized) `pred_seg`;
/// `m_bound` is the boundary band.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    pred_seg: &Grid,
    seg_target: &Grid,
    pred_bound: &Grid,
    bound_target: &Grid,
    img_field: &GradientField,
    pred_field: &GradientField,
    m_bound: &Grid,
    weights: &LossWeights,
    refine_enabled: bool,
) -> Result<LossReport> {
    let seg = bce(pred_seg, seg_target)?;
    let bound = bce(pred_bound, bound_target)?;
    let terms = refine_terms(img_field, pred_field, m_bound, weights.lambda)?;
    Ok(LossReport::compose(
        seg,
        bound,
        terms.cos,
        terms.mag,
        weights,
        refine_enabled,
    ))
}

/// Inputs to [`objective`]: raw network logits plus targets for one sample.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub seg_logits: &'a Grid,
    pub seg_target: &'a Grid,
    /// Attention logits and boundary target; `None` when the attention head
    /// is ablated.
    pub bound: Option<(&'a Grid, &'a Grid)>,
    pub img_field: &'a GradientField,
    pub m_bound: &'a Grid,
}

/// Loss values and gradients with respect to the logits.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub report: LossReport,
    pub grad_seg_logits: Grid,
    pub grad_bound_logits: Option<Grid>,
}

/// Training objective over logits.
///
/// The confidence map is `sigmoid(seg_logits)`, the attention map is
/// `sigmoid(bound_logits / T)`, and the prediction field is taken on the
/// min-max normalized confidence map. The refine term is evaluated (and
/// reported) even when disabled, but contributes no gradient then.
pub fn objective(
    inputs: &ObjectiveInputs<'_>,
    weights: &LossWeights,
    refine_enabled: bool,
) -> Result<ObjectiveOutput> {
    let (seg, seg_grad) = bce_with_logits(inputs.seg_logits, inputs.seg_target, 1.0)?;
    let (bound, grad_bound_logits) = match inputs.bound {
        Some((logits, target)) => {
            let (v, g) = bce_with_logits(logits, target, weights.temperature)?;
            (v, Some(g.map(|d| weights.beta * d)))
        }
        None => (0.0, None),
    };
    let confidence = inputs.seg_logits.map(sigmoid);
    let pred_field = prediction_gradient(&confidence)?;
    let terms = refine_terms(inputs.img_field, &pred_field, inputs.m_bound, weights.lambda)?;
    let report = LossReport::compose(seg, bound, terms.cos, terms.mag, weights, refine_enabled);

    let mut grad_seg_logits = seg_grad.map(|d| weights.alpha * d);
    if refine_enabled && weights.gamma > 0.0 {
        let d_norm = refine_loss_backward(
            inputs.img_field,
            &pred_field,
            inputs.m_bound,
            weights.gamma_cos,
            weights.gamma_mag,
            weights.lambda,
        )?;
        let d_conf = minmax_normalize_backward(&confidence, &d_norm);
        for ((g, &d), &p) in grad_seg_logits
            .as_mut_slice()
            .iter_mut()
            .zip(d_conf.as_slice())
            .zip(confidence.as_slice())
        {
            *g += weights.gamma * d * p * (1.0 - p);
        }
    }
    Ok(ObjectiveOutput {
        report,
        grad_seg_logits,
        grad_bound_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::gradient_field;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(gx: f64, gy: f64) -> GradientField {
        GradientField::from_components(Grid::filled(1, 1, gx), Grid::filled(1, 1, gy)).unwrap()
    }

    #[test]
    fn temperature_sigmoid_examples() {
        let t = 4.0;
        let zero = temperature_sigmoid(&Grid::zeros(1, 1), t);
        assert_eq!(zero[(0, 0)], 0.5);
        let at_t = temperature_sigmoid(&Grid::filled(1, 1, t), t);
        assert!((at_t[(0, 0)] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((at_t[(0, 0)] - 0.7311).abs() < 1e-4);
        let x = Grid::filled(1, 1, 2.0);
        let soft = temperature_sigmoid(&x, 8.0)[(0, 0)];
        let sharp = temperature_sigmoid(&x, 2.0)[(0, 0)];
        assert!(soft - 0.5 < sharp - 0.5 && soft > 0.5);
    }

    #[test]
    fn bce_analytic_values() {
        let ones = Grid::filled(3, 3, 1.0);
        assert!((bce(&Grid::filled(3, 3, 0.5), &ones).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!((bce(&Grid::filled(3, 3, 0.25), &ones).unwrap() + 0.25f64.ln()).abs() < 1e-12);
        let perfect = bce(&ones, &ones).unwrap();
        assert!(perfect >= 0.0 && perfect < 1e-6);
        assert!(bce(&Grid::zeros(2, 2), &Grid::zeros(3, 2)).is_err());
    }

    #[test]
    fn logits_bce_agrees_with_probability_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Grid::from_fn(5, 5, |_, _| rng.gen_range(-6.0..6.0));
        let target = Grid::from_fn(5, 5, |y, x| ((y + x) % 2) as f64);
        for t in [1.0, 4.0] {
            let (v, _) = bce_with_logits(&logits, &target, t).unwrap();
            let p = temperature_sigmoid(&logits, t);
            assert!((v - bce(&p, &target).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cos_examples() {
        let parallel = cos_loss(&field(1.0, 0.0), &field(-3.0, 0.0)).unwrap();
        assert_eq!(parallel[(0, 0)], 0.0);
        let orthogonal = cos_loss(&field(1.0, 0.0), &field(0.0, 2.0)).unwrap();
        assert_eq!(orthogonal[(0, 0)], 2.0);
        let flat = cos_loss(&field(0.6, 0.8), &field(0.0, 0.0)).unwrap();
        assert_eq!(flat[(0, 0)], 0.0);
    }

    #[test]
    fn mag_examples() {
        assert_eq!(mag_loss(&field(2.0, 0.0), &field(4.0, 0.0), 1.5).unwrap()[(0, 0)], 0.0);
        assert_eq!(mag_loss(&field(2.0, 0.0), &field(1.0, 0.0), 1.5).unwrap()[(0, 0)], 2.0);
        assert_eq!(mag_loss(&field(0.0, 0.0), &field(0.0, 7.0), 1.5).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn refine_examples() {
        let flat = gradient_field(&Grid::zeros(4, 4)).unwrap();
        assert_eq!(refine_loss(&flat, &flat, &Grid::zeros(4, 4), 0.5, 0.5, 1.5).unwrap(), 0.0);
        assert_eq!(refine_loss(&flat, &flat, &Grid::filled(4, 4, 1.0), 0.5, 0.5, 1.5).unwrap(), 0.0);
        let terms = RefineTerms { cos: 0.4, mag: 0.2 };
        assert!((terms.combine(0.5, 0.5) - 0.3).abs() < 1e-15);
        // One boundary pixel: image (1,0) magnitude 1, prediction |G| = 0.4/cos-free.
        let img = field(1.0, 0.0);
        let pred = field(0.0, 0.4);
        let t = refine_terms(&img, &pred, &Grid::filled(1, 1, 1.0), 0.6).unwrap();
        assert!((t.cos - 0.4).abs() < 1e-15);
        assert!((t.mag - 0.2).abs() < 1e-15);
        assert!((t.combine(0.5, 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn composition_examples() {
        let w = LossWeights::default();
        let on = LossReport::compose(1.0, 2.0, 3.0, 3.0, &w, true);
        assert!((on.refine - 3.0).abs() < 1e-15);
        assert!((on.total - 1.5).abs() < 1e-12);
        let off = LossReport::compose(1.0, 2.0, 3.0, 3.0, &w, false);
        assert!((off.total - 1.2).abs() < 1e-12);
        assert_eq!(off.refine, on.refine);
    }

    #[test]
    fn perfect_prediction_with_empty_boundary_is_near_zero() {
        let target = Grid::from_fn(8, 8, |_, x| (x >= 4) as u8 as f64);
        let w = LossWeights::default();
        let flat = gradient_field(&Grid::zeros(8, 8)).unwrap();
        let report = total_loss(
            &target,
            &target,
            &Grid::zeros(8, 8),
            &Grid::zeros(8, 8),
            &flat,
            &flat,
            &Grid::zeros(8, 8),
            &w,
            true,
        )
        .unwrap();
        assert!(report.total < 1e-6);
    }

    #[test]
    fn doubling_gamma_doubles_refine_contribution() {
        let mut w = LossWeights::default();
        let a = LossReport::compose(0.7, 0.2, 0.9, 0.4, &w, true);
        w.gamma *= 2.0;
        let b = LossReport::compose(0.7, 0.2, 0.9, 0.4, &w, true);
        let base = 0.6 * 0.7 + 0.3 * 0.2;
        assert!(((b.total - base) - 2.0 * (a.total - base)).abs() < 1e-12);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let mut w = LossWeights::default();
        w.temperature = 0.0;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.beta = -0.1;
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
