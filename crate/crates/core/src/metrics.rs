//! Intersection-over-union on binarized predictions.

use crate::raster::Grid;
use crate::Result;

/// How per-image IoU is averaged over classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouMode {
    /// Portrait class only.
    #[default]
    Foreground,
    /// Mean of portrait and background IoU.
    TwoClass,
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Foreground IoU of `pred >= threshold` against a binary target. Both sets
/// empty counts as perfect agreement.
pub fn iou(pred: &Grid, target: &Grid, threshold: f64) -> Result<f64> {
    pred.check_same_dims(target)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.as_slice().iter().zip(target.as_slice()) {
        let a = p >= threshold;
        let b = t > 0.5;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(ratio(inter, union))
}

/// IoU under the given class averaging.
pub fn iou_with_mode(pred: &Grid, target: &Grid, threshold: f64, mode: IouMode) -> Result<f64> {
    let fg = iou(pred, target, threshold)?;
    match mode {
        IouMode::Foreground => Ok(fg),
        IouMode::TwoClass => {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&p, &t) in pred.as_slice().iter().zip(target.as_slice()) {
                let a = p < threshold;
                let b = t <= 0.5;
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            Ok(0.5 * (fg + ratio(inter, union)))
        }
    }
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(n: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Grid {
        Grid::from_fn(n, n, |y, x| ((y0..y1).contains(&y) && (x0..x1).contains(&x)) as u8 as f64)
    }

    #[test]
    fn identical_disjoint_and_half_overlap() {
        let a = rect(12, 2, 6, 2, 6);
        assert_eq!(iou(&a, &a, 0.5).unwrap(), 1.0);
        let b = rect(12, 7, 11, 7, 11);
        assert_eq!(iou(&a, &b, 0.5).unwrap(), 0.0);
        // 4x4 squares shifted by two columns: overlap 8 of area 16.
        let c = rect(12, 2, 6, 4, 8);
        let brute = {
            let (mut i, mut u) = (0, 0);
            for (p, q) in a.as_slice().iter().zip(c.as_slice()) {
                i += (*p > 0.5 && *q > 0.5) as usize;
                u += (*p > 0.5 || *q > 0.5) as usize;
            }
            i as f64 / u as f64
        };
        assert_eq!(brute, 1.0 / 3.0);
        assert_eq!(iou(&a, &c, 0.5).unwrap(), brute);
    }

    #[test]
    fn empty_union_is_perfect() {
        assert_eq!(iou(&Grid::zeros(4, 4), &Grid::zeros(4, 4), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(iou(&Grid::zeros(4, 4), &Grid::zeros(4, 5), 0.5).is_err());
    }

    #[test]
    fn two_class_mode() {
        let a = rect(4, 0, 2, 0, 4);
        let b = rect(4, 0, 4, 0, 4);
        // fg: 8/16, bg: 0/8
        assert_eq!(iou_with_mode(&a, &b, 0.5, IouMode::TwoClass).unwrap(), 0.25);
    }

    fn binary(n: usize) -> impl Strategy<Value = Grid> {
        prop::collection::vec(prop::bool::ANY, n * n)
            .prop_map(move |v| Grid::from_vec(n, n, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_complement_invariant(a in binary(6), b in binary(6)) {
            let ab = iou(&a, &b, 0.5).unwrap();
            prop_assert_eq!(ab, iou(&b, &a, 0.5).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            let (ca, cb) = (a.map(|v| 1.0 - v), b.map(|v| 1.0 - v));
            let fg_bg = iou_with_mode(&a, &b, 0.5, IouMode::TwoClass).unwrap();
            prop_assert!((fg_bg - iou_with_mode(&ca, &cb, 0.5, IouMode::TwoClass).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn threshold_sweep_is_finite(values in prop::collection::vec(0.0f64..1.0, 36), t in binary(6)) {
            let p = Grid::from_vec(6, 6, values).unwrap();
            for k in 1..=9 {
                let v = iou(&p, &t, k as f64 / 10.0).unwrap();
                prop_assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            }
        }
    }
}
