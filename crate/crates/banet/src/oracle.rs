//! Brute-force oracles and golden files for the numerical core.
//!
//! The Sobel operator and the loss weights are injectable so tests can check
//! that a deliberately broken implementation is caught.

use std::time::Instant;

use banet_core::boundary::{dilate_square, dilation_kernel_size, DilationSpec};
use banet_core::gradient::{gradient_field, sobel_adjoint, GradientField, SOBEL_X, SOBEL_Y, FLAT_EPSILON};
use banet_core::loss::{
    bce, bce_grad, cos_loss, cos_loss_backward, mag_loss, mag_loss_backward, objective, refine_loss,
    refine_loss_backward, sigmoid, total_loss, LossWeights, ObjectiveInputs,
};
use banet_core::raster::{minmax_normalize, minmax_normalize_backward, resize_bilinear, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::deterministic_mode;

pub type SobelFn = fn(&Grid) -> banet_core::Result<(Grid, Grid)>;

const BILINEAR_GOLDEN: &str = include_str!("../goldens/bilinear.json");
const HINGE_GOLDEN: &str = include_str!("../goldens/hinge.json");

/// Largest accepted relative error of an analytic gradient.
pub const FD_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
/// Inputs closer than this to a non-differentiable point are redrawn.
const KINK_MARGIN: f64 = 1e-4;
const FD_SIDE: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleReport {
    pub outcomes: Vec<OracleOutcome>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn get(&self, name: &str) -> Option<&OracleOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    pub fn to_text(&self) -> String {
        let timed = !deterministic_mode();
        let mut out = String::new();
        for o in &self.outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            if timed {
                out.push_str(&format!("{status} {} ({:.3}s): {}\n", o.name, o.seconds, o.detail));
            } else {
                out.push_str(&format!("{status} {}: {}\n", o.name, o.detail));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSuite {
    pub sobel: SobelFn,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for OracleSuite {
    fn default() -> Self {
        Self {
            sobel: banet_core::gradient::sobel,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

fn timed(name: &str, f: impl FnOnce() -> (bool, String)) -> OracleOutcome {
    let start = Instant::now();
    let (passed, detail) = f();
    OracleOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Grid {
    Grid::from_fn(h, w, |_, _| rng.gen_range(lo..hi))
}

fn random_binary(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Grid {
    Grid::from_fn(h, w, |_, _| rng.gen_bool(p) as u8 as f64)
}

fn correlate_interior(map: &Grid, k: &[[f64; 3]; 3], y: usize, x: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += k[i][j] * map[(y + i - 1, x + j - 1)];
        }
    }
    acc
}

fn max_abs(g: &Grid) -> f64 {
    g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Max-norm relative error between two gradients.
pub fn relative_error(analytic: &Grid, numeric: &Grid) -> f64 {
    let diff = analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / max_abs(analytic).max(max_abs(numeric)).max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn central_difference(f: &dyn Fn(&Grid) -> f64, x: &Grid, step: f64) -> Grid {
    let mut grad = Grid::zeros(x.height(), x.width());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Whether every (band) pixel is safely away from the kinks of the
/// direction and magnitude terms.
fn field_is_smooth(img: &GradientField, pred: &GradientField, lambda: f64, band: Option<&Grid>) -> bool {
    let (h, w) = img.dims();
    for y in 0..h {
        for x in 0..w {
            if band.is_some_and(|b| b[(y, x)] <= 0.5) {
                continue;
            }
            let mp = pred.magnitude()[(y, x)];
            let mi = img.magnitude()[(y, x)];
            let dot = img.direction_x()[(y, x)] * pred.gx()[(y, x)] + img.direction_y()[(y, x)] * pred.gy()[(y, x)];
            if mp < KINK_MARGIN || mi < KINK_MARGIN || dot.abs() < KINK_MARGIN || (lambda * mi - mp).abs() < KINK_MARGIN {
                return false;
            }
        }
    }
    true
}

/// Whether the extremes of `map` are unique by a safe gap.
fn extremes_are_isolated(map: &Grid) -> bool {
    let mut v = map.as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    n < 2 || (v[1] - v[0] > KINK_MARGIN && v[n - 1] - v[n - 2] > KINK_MARGIN)
}

fn weighted_sum(values: &Grid, weights: &Grid) -> f64 {
    values.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

type GradCase = Box<dyn Fn(&mut ChaCha8Rng) -> Option<Vec<(Box<dyn Fn(&Grid) -> f64>, Grid, Grid)>>>;

impl OracleSuite {
    pub fn run(&self) -> OracleReport {
        let mut outcomes = vec![
            self.sobel_oracle(),
            self.gradient_field_contract(),
            self.kernel_size_oracle(),
            self.dilation_oracle(),
        ];
        outcomes.extend(self.loss_gradient_checks());
        outcomes.push(self.bilinear_goldens());
        outcomes.push(self.hinge_goldens());
        OracleReport { outcomes }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&stream.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Interior pixels against a direct 3×3 cross-correlation on 100 random
    /// 8×8 maps, plus exact zeros on a constant map.
    pub fn sobel_oracle(&self) -> OracleOutcome {
        timed("sobel", || {
            let mut rng = self.rng(1);
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let map = random_map(&mut rng, 8, 8, -1.0, 1.0);
                let (gx, gy) = match (self.sobel)(&map) {
                    Ok(g) => g,
                    Err(e) => return (false, format!("sobel failed: {e}")),
                };
                for y in 1..7 {
                    for x in 1..7 {
                        worst = worst.max((gx[(y, x)] - correlate_interior(&map, &SOBEL_X, y, x)).abs());
                        worst = worst.max((gy[(y, x)] - correlate_interior(&map, &SOBEL_Y, y, x)).abs());
                    }
                }
            }
            let flat_ok = match (self.sobel)(&Grid::filled(8, 8, 0.37)) {
                Ok((gx, gy)) => gx.as_slice().iter().chain(gy.as_slice()).all(|&v| v == 0.0),
                Err(_) => false,
            };
            (
                worst <= 1e-12 && flat_ok,
                format!("max interior error {worst:.3e}, constant map zero: {flat_ok}"),
            )
        })
    }

    /// Magnitude and unit-direction contract of the gradient field.
    pub fn gradient_field_contract(&self) -> OracleOutcome {
        timed("gradient_field", || {
            let mut rng = self.rng(2);
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let map = random_map(&mut rng, 8, 8, 0.0, 1.0);
                let field = match (self.sobel)(&map).and_then(|(gx, gy)| GradientField::from_components(gx, gy)) {
                    Ok(f) => f,
                    Err(e) => return (false, format!("field failed: {e}")),
                };
                for i in 0..map.len() {
                    let (gx, gy) = (field.gx().as_slice()[i], field.gy().as_slice()[i]);
                    let m = field.magnitude().as_slice()[i];
                    worst = worst.max((m - (gx * gx + gy * gy).sqrt()).abs());
                    if m > FLAT_EPSILON {
                        let (nx, ny) = (field.direction_x().as_slice()[i], field.direction_y().as_slice()[i]);
                        worst = worst.max(((nx * nx + ny * ny).sqrt() - 1.0).abs());
                    }
                }
            }
            (worst <= 1e-6, format!("max contract error {worst:.3e}"))
        })
    }

    /// Kernel side against integer substitution on 20 random area fractions.
    pub fn kernel_size_oracle(&self) -> OracleOutcome {
        timed("kernel_size", || {
            let mut rng = self.rng(3);
            let width = self.weights.canonical_width;
            let total = 128 * 128usize;
            let mut mismatches = Vec::new();
            for _ in 0..20 {
                let portrait = rng.gen_range(0..=total);
                let spec = DilationSpec {
                    canonical_width: width,
                    portrait_area: portrait,
                    background_area: total - portrait,
                };
                // round(portrait / total * W), ties away from zero.
                let raw = (2 * portrait * width as usize + total) / (2 * total);
                let expected = if raw % 2 == 0 { raw + 1 } else { raw };
                match dilation_kernel_size(&spec) {
                    Ok(k) if k == expected => {}
                    other => mismatches.push(format!("area {portrait}: {other:?} vs {expected}")),
                }
            }
            (mismatches.is_empty(), format!("20 fractions, mismatches: {mismatches:?}"))
        })
    }

    /// Square dilation against a per-pixel Chebyshev-distance search.
    pub fn dilation_oracle(&self) -> OracleOutcome {
        timed("dilation", || {
            let mut rng = self.rng(4);
            for case in 0..60 {
                let h = rng.gen_range(1..=32);
                let w = rng.gen_range(1..=32);
                let density = rng.gen_range(0.0..0.2);
                let mask = random_binary(&mut rng, h, w, density);
                let k = 2 * rng.gen_range(0..8usize) + 1;
                let r = (k / 2) as isize;
                let got = match dilate_square(&mask, k) {
                    Ok(g) => g,
                    Err(e) => return (false, format!("case {case}: {e}")),
                };
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut hit = false;
                        for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                            for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                                hit |= mask[(yy as usize, xx as usize)] > 0.5;
                            }
                        }
                        if got[(y as usize, x as usize)] != hit as u8 as f64 {
                            return (false, format!("case {case} ({h}x{w}, k={k}) differs at ({y}, {x})"));
                        }
                    }
                }
            }
            (true, "60 random masks up to 32x32 match exactly".into())
        })
    }

    fn gradient_check(&self, name: &str, stream: u64, case: GradCase) -> OracleOutcome {
        timed(name, || {
            let mut rng = self.rng(stream);
            let mut worst = 0.0f64;
            let mut trials = 0;
            let mut redraws = 0;
            while trials < 5 {
                let Some(parts) = case(&mut rng) else {
                    redraws += 1;
                    if redraws > 500 {
                        return (false, "no kink-free input found".into());
                    }
                    continue;
                };
                for (f, x, analytic) in parts {
                    let numeric = central_difference(f.as_ref(), &x, FD_STEP);
                    worst = worst.max(relative_error(&analytic, &numeric));
                }
                trials += 1;
            }
            (
                worst < FD_TOLERANCE,
                format!("max relative error {worst:.3e} over {trials} inputs ({redraws} redrawn)"),
            )
        })
    }

    /// Central-difference checks of every loss term and the total.
    pub fn loss_gradient_checks(&self) -> Vec<OracleOutcome> {
        let n = FD_SIDE;
        let w = self.weights;
        let mut out = Vec::new();

        out.push(self.gradient_check(
            "grad_bce",
            10,
            Box::new(move |rng| {
                let p = random_map(rng, n, n, 0.05, 0.95);
                let t = random_binary(rng, n, n, 0.5);
                let analytic = bce_grad(&p, &t).ok()?;
                let f: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| bce(x, &t).expect("same dims"));
                Some(vec![(f, p, analytic)])
            }),
        ));

        out.push(self.gradient_check(
            "grad_cos",
            11,
            Box::new(move |rng| {
                let img = gradient_field(&random_map(rng, n, n, 0.0, 1.0)).ok()?;
                let p = random_map(rng, n, n, 0.0, 1.0);
                let pred = gradient_field(&p).ok()?;
                if !field_is_smooth(&img, &pred, w.lambda, None) {
                    return None;
                }
                let u = random_map(rng, n, n, 0.5, 1.5);
                let (gx, gy) = cos_loss_backward(&img, &pred, &u).ok()?;
                let analytic = sobel_adjoint(&gx, &gy).ok()?;
                let f: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| {
                    weighted_sum(&cos_loss(&img, &gradient_field(x).expect("size")).expect("dims"), &u)
                });
                Some(vec![(f, p, analytic)])
            }),
        ));

        out.push(self.gradient_check(
            "grad_mag",
            12,
            Box::new(move |rng| {
                let img = gradient_field(&random_map(rng, n, n, 0.0, 1.0)).ok()?;
                let p = random_map(rng, n, n, 0.0, 1.0);
                let pred = gradient_field(&p).ok()?;
                if !field_is_smooth(&img, &pred, w.lambda, None) {
                    return None;
                }
                let u = random_map(rng, n, n, 0.5, 1.5);
                let (gx, gy) = mag_loss_backward(&img, &pred, w.lambda, &u).ok()?;
                let analytic = sobel_adjoint(&gx, &gy).ok()?;
                let f: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| {
                    let pred = gradient_field(x).expect("size");
                    weighted_sum(&mag_loss(&img, &pred, w.lambda).expect("dims"), &u)
                });
                Some(vec![(f, p, analytic)])
            }),
        ));

        out.push(self.gradient_check(
            "grad_refine",
            13,
            Box::new(move |rng| {
                let img = gradient_field(&random_map(rng, n, n, 0.0, 1.0)).ok()?;
                let p = random_map(rng, n, n, 0.0, 1.0);
                let band = random_binary(rng, n, n, 0.5);
                let pred = gradient_field(&p).ok()?;
                if band.as_slice().iter().all(|&b| b == 0.0) || !field_is_smooth(&img, &pred, w.lambda, Some(&band)) {
                    return None;
                }
                let analytic = refine_loss_backward(&img, &pred, &band, w.gamma_cos, w.gamma_mag, w.lambda).ok()?;
                let f: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| {
                    let pred = gradient_field(x).expect("size");
                    refine_loss(&img, &pred, &band, w.gamma_cos, w.gamma_mag, w.lambda).expect("dims")
                });
                Some(vec![(f, p, analytic)])
            }),
        ));

        out.push(self.gradient_check(
            "grad_total",
            14,
            Box::new(move |rng| {
                let img = gradient_field(&random_map(rng, n, n, 0.0, 1.0)).ok()?;
                let p = random_map(rng, n, n, 0.05, 0.95);
                let q = random_map(rng, n, n, 0.05, 0.95);
                let t = random_binary(rng, n, n, 0.5);
                let bt = random_binary(rng, n, n, 0.5);
                let band = random_binary(rng, n, n, 0.5);
                let pred = gradient_field(&minmax_normalize(&p)).ok()?;
                if band.as_slice().iter().all(|&b| b == 0.0)
                    || !extremes_are_isolated(&p)
                    || !field_is_smooth(&img, &pred, w.lambda, Some(&band))
                {
                    return None;
                }
                let d_norm = refine_loss_backward(&img, &pred, &band, w.gamma_cos, w.gamma_mag, w.lambda).ok()?;
                let d_refine = minmax_normalize_backward(&p, &d_norm);
                let d_seg = bce_grad(&p, &t).ok()?;
                let grad_p = Grid::from_fn(n, n, |y, x| w.alpha * d_seg[(y, x)] + w.gamma * d_refine[(y, x)]);
                let grad_q = bce_grad(&q, &bt).ok()?.map(|d| w.beta * d);
                let total = move |p: &Grid, q: &Grid| {
                    let pred = gradient_field(&minmax_normalize(p)).expect("size");
                    total_loss(p, &t, q, &bt, &img, &pred, &band, &w, true).expect("dims").total
                };
                let (p0, q0) = (p.clone(), q.clone());
                let total2 = total.clone();
                let fp: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| total(x, &q0));
                let fq: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| total2(&p0, x));
                Some(vec![(fp, p, grad_p), (fq, q, grad_q)])
            }),
        ));

        out.push(self.gradient_check(
            "grad_objective",
            15,
            Box::new(move |rng| {
                let img = gradient_field(&random_map(rng, n, n, 0.0, 1.0)).ok()?;
                let zs = random_map(rng, n, n, -3.0, 3.0);
                let zb = random_map(rng, n, n, -6.0, 6.0);
                let t = random_binary(rng, n, n, 0.5);
                let bt = random_binary(rng, n, n, 0.5);
                let band = random_binary(rng, n, n, 0.5);
                let conf = zs.map(sigmoid);
                let pred = gradient_field(&minmax_normalize(&conf)).ok()?;
                if band.as_slice().iter().all(|&b| b == 0.0)
                    || !extremes_are_isolated(&conf)
                    || !field_is_smooth(&img, &pred, w.lambda, Some(&band))
                {
                    return None;
                }
                let eval = move |zs: &Grid, zb: &Grid| {
                    objective(
                        &ObjectiveInputs {
                            seg_logits: zs,
                            seg_target: &t,
                            bound: Some((zb, &bt)),
                            img_field: &img,
                            m_bound: &band,
                        },
                        &w,
                        true,
                    )
                    .expect("dims")
                };
                let base = eval(&zs, &zb);
                let grad_b = base.grad_bound_logits.clone()?;
                let (zs0, zb0) = (zs.clone(), zb.clone());
                let eval2 = eval.clone();
                let fs: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| eval(x, &zb0).report.total);
                let fb: Box<dyn Fn(&Grid) -> f64> = Box::new(move |x| eval2(&zs0, x).report.total);
                Some(vec![(fs, zs, base.grad_seg_logits), (fb, zb, grad_b)])
            }),
        ));
        out
    }

    /// Corner-aligned bilinear resizing against stored expectations.
    pub fn bilinear_goldens(&self) -> OracleOutcome {
        #[derive(Deserialize)]
        struct Case {
            input: Vec<Vec<f64>>,
            out_height: usize,
            out_width: usize,
            expected: Vec<Vec<f64>>,
        }
        #[derive(Deserialize)]
        struct File {
            cases: Vec<Case>,
        }
        timed("bilinear_golden", || {
            let file: File = match serde_json::from_str(BILINEAR_GOLDEN) {
                Ok(f) => f,
                Err(e) => return (false, format!("golden file unreadable: {e}")),
            };
            let mut worst = 0.0f64;
            for (i, c) in file.cases.iter().enumerate() {
                let h = c.input.len();
                let w = c.input[0].len();
                let input = Grid::from_fn(h, w, |y, x| c.input[y][x]);
                let got = match resize_bilinear(&input, c.out_height, c.out_width) {
                    Ok(g) => g,
                    Err(e) => return (false, format!("case {i}: {e}")),
                };
                for (y, row) in c.expected.iter().enumerate() {
                    for (x, &v) in row.iter().enumerate() {
                        worst = worst.max((got[(y, x)] - v).abs());
                    }
                }
            }
            (worst <= 1e-12, format!("{} cases, max error {worst:.3e}", file.cases.len()))
        })
    }

    /// Magnitude hinge values at fixed gradient pairs, using this suite's λ.
    pub fn hinge_goldens(&self) -> OracleOutcome {
        #[derive(Deserialize)]
        struct Case {
            img: [f64; 2],
            pred: [f64; 2],
            expected: f64,
        }
        #[derive(Deserialize)]
        struct File {
            cases: Vec<Case>,
        }
        timed("hinge_golden", || {
            let file: File = match serde_json::from_str(HINGE_GOLDEN) {
                Ok(f) => f,
                Err(e) => return (false, format!("golden file unreadable: {e}")),
            };
            let field = |g: [f64; 2]| GradientField::from_components(Grid::filled(1, 1, g[0]), Grid::filled(1, 1, g[1]));
            let mut failures = Vec::new();
            for (i, c) in file.cases.iter().enumerate() {
                let got = field(c.img)
                    .and_then(|img| mag_loss(&img, &field(c.pred)?, self.weights.lambda))
                    .map(|g| g[(0, 0)]);
                match got {
                    Ok(v) if (v - c.expected).abs() <= 1e-12 => {}
                    other => failures.push(format!("case {i}: {other:?} vs {}", c.expected)),
                }
            }
            (
                failures.is_empty(),
                format!("lambda {}, {} cases, failures: {failures:?}", self.weights.lambda, file.cases.len()),
            )
        })
    }
}
