use crate::imagecore::{BitMask, FlowField};

use super::OcclusionError;

/// Marks `x` occluded when `x + fwd(x)` leaves the image or
/// `‖fwd(x) + bwd(x + fwd(x))‖ > threshold`. Unknown flow is occluded.
pub fn forward_backward_mask(fwd: &FlowField, bwd: &FlowField, threshold: f64) -> Result<BitMask, OcclusionError> {
    if (fwd.width(), fwd.height()) != (bwd.width(), bwd.height()) {
        return Err(OcclusionError::DimensionMismatch);
    }
    let (w, h) = (fwd.width(), fwd.height());
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    Ok(BitMask::from_fn(w, h, |x, y| {
        if !fwd.is_valid(x, y) {
            return true;
        }
        let [u, v] = fwd.get(x, y);
        let tx = x as f64 + u as f64;
        let ty = y as f64 + v as f64;
        if !(0.0..=xmax).contains(&tx) || !(0.0..=ymax).contains(&ty) {
            return true;
        }
        let [bu, bv] = bwd.sample(tx, ty);
        let (ru, rv) = (u as f64 + bu as f64, v as f64 + bv as f64);
        (ru * ru + rv * rv).sqrt() > threshold
    }))
}

fn square_filter(m: &BitMask, r: usize, dilate: bool) -> BitMask {
    let (w, h) = (m.width(), m.height());
    let r = r as i64;
    let at = |x: i64, y: i64| m.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize);
    // separable: rows then columns
    let rows = BitMask::from_fn(w, h, |x, y| {
        let mut it = (-r..=r).map(|d| at(x as i64 + d, y as i64));
        if dilate { it.any(|b| b) } else { it.all(|b| b) }
    });
    let at_rows = |x: usize, y: i64| rows.get(x, y.clamp(0, h as i64 - 1) as usize);
    BitMask::from_fn(w, h, |x, y| {
        let mut it = (-r..=r).map(|d| at_rows(x, y as i64 + d));
        if dilate { it.any(|b| b) } else { it.all(|b| b) }
    })
}

/// Dilation followed by erosion of the occluded set with a `(2r+1)²` square;
/// clamp-to-edge at the border.
pub fn morphological_close(m: &BitMask, r: usize) -> BitMask {
    if r == 0 {
        return m.clone();
    }
    square_filter(&square_filter(m, r, true), r, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistent_fields_are_visible() {
        let fwd = FlowField::constant(12, 9, 2.0, -1.0);
        let bwd = FlowField::constant(12, 9, -2.0, 1.0);
        let m = forward_backward_mask(&fwd, &bwd, 3.0).unwrap();
        // only pixels whose target leaves the image are flagged
        for y in 0..9 {
            for x in 0..12 {
                let inside = x + 2 < 12 && y >= 1;
                assert_eq!(m.get(x, y), !inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn inconsistent_is_occluded() {
        let fwd = FlowField::constant(30, 4, 10.0, 0.0);
        let bwd = FlowField::zeros(30, 4);
        let m = forward_backward_mask(&fwd, &bwd, 3.0).unwrap();
        assert_eq!(m.count(), 30 * 4);
    }

    #[test]
    fn residual_equal_to_threshold_is_visible() {
        let fwd = FlowField::constant(10, 3, 3.0, 0.0);
        let bwd = FlowField::zeros(10, 3);
        let m = forward_backward_mask(&fwd, &bwd, 3.0).unwrap();
        assert!(!m.get(2, 1));
        assert!(m.get(7, 1)); // target x = 10 is outside
    }

    #[test]
    fn dimension_mismatch() {
        assert!(forward_backward_mask(&FlowField::zeros(3, 3), &FlowField::zeros(4, 3), 3.0).is_err());
    }

    #[test]
    fn closing_examples() {
        let m = BitMask::from_fn(9, 9, |x, y| (x * y) % 4 == 1);
        assert_eq!(morphological_close(&m, 0), m);
        let mut hole = BitMask::filled(9, 9, true);
        hole.set(4, 4, false);
        assert_eq!(morphological_close(&hole, 1).count(), 81);
        let clear = BitMask::new(9, 9);
        for r in 0..4 {
            assert_eq!(morphological_close(&clear, r), clear);
        }
    }
}
