use super::{FlowField, Raster};

/// Saturation magnitude for [`flow_to_color`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxMagnitude {
    Fixed(f32),
    /// 99th percentile of valid flow magnitudes.
    Auto,
}

/// The 55-entry Middlebury colour wheel (RY, YG, GC, CB, BM, MR segments).
pub fn color_wheel() -> Vec<[f32; 3]> {
    const SEGMENTS: [(usize, [f32; 3], [f32; 3]); 6] = [
        (15, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        (6, [1.0, 1.0, 0.0], [-1.0, 0.0, 0.0]),
        (4, [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
        (11, [0.0, 1.0, 1.0], [0.0, -1.0, 0.0]),
        (13, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
        (6, [1.0, 0.0, 1.0], [0.0, 0.0, -1.0]),
    ];
    let mut wheel = Vec::with_capacity(55);
    for (n, base, ramp) in SEGMENTS {
        for i in 0..n {
            let t = i as f32 / n as f32;
            wheel.push([base[0] + ramp[0] * t, base[1] + ramp[1] * t, base[2] + ramp[2] * t]);
        }
    }
    wheel
}

fn wheel_color(wheel: &[[f32; 3]], u: f32, v: f32) -> [f32; 3] {
    let n = wheel.len();
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f32::consts::PI;
    let fk = (a + 1.0) / 2.0 * (n - 1) as f32;
    let k0 = (fk.floor() as usize).min(n - 1);
    let k1 = (k0 + 1) % n;
    let f = fk - k0 as f32;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        out[c] = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col };
    }
    out
}

/// Colours a flow field with the standard optical-flow wheel; unknown pixels are black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: MaxMagnitude) -> Raster {
    let max = match max_magnitude {
        MaxMagnitude::Fixed(m) if m > 0.0 => m,
        _ => robust_max(flow),
    };
    let wheel = color_wheel();
    Raster::from_fn(flow.width(), flow.height(), 3, |x, y, out| {
        if !flow.is_valid(x, y) {
            out.fill(0.0);
            return;
        }
        let [u, v] = flow.get(x, y);
        let (mut u, mut v) = (u / max, v / max);
        let r = (u * u + v * v).sqrt();
        if r > 1.0 {
            u /= r;
            v /= r;
        }
        out.copy_from_slice(&wheel_color(&wheel, u, v));
    })
}

fn robust_max(flow: &FlowField) -> f32 {
    let mut mags: Vec<f32> = (0..flow.height())
        .flat_map(|y| (0..flow.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| flow.is_valid(x, y))
        .map(|(x, y)| {
            let [u, v] = flow.get(x, y);
            (u * u + v * v).sqrt()
        })
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(|a, b| a.total_cmp(b));
    let idx = ((mags.len() - 1) as f32 * 0.99).round() as usize;
    let m = mags[idx];
    if m > 0.0 { m } else { 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white() {
        let c = flow_to_color(&FlowField::zeros(2, 2), MaxMagnitude::Fixed(1.0));
        assert_eq!(c.pixel(0, 0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn max_flow_along_x_is_wheel_origin() {
        let wheel = color_wheel();
        assert_eq!(wheel.len(), 55);
        let c = flow_to_color(&FlowField::constant(1, 1, 4.0, 0.0), MaxMagnitude::Fixed(4.0));
        assert_eq!(c.pixel(0, 0), &wheel[0]);
        assert_eq!(c.pixel(0, 0), &[1.0, 0.0, 0.0]);
        // saturation beyond max keeps the same hue
        let d = flow_to_color(&FlowField::constant(1, 1, 40.0, 0.0), MaxMagnitude::Fixed(4.0));
        assert_eq!(d.pixel(0, 0), c.pixel(0, 0));
    }

    #[test]
    fn invalid_is_black() {
        let mut f = FlowField::constant(2, 1, 1.0, 1.0);
        f.set_invalid(1, 0);
        let c = flow_to_color(&f, MaxMagnitude::Auto);
        assert_eq!(c.pixel(1, 0), &[0.0, 0.0, 0.0]);
        assert_ne!(c.pixel(0, 0), &[0.0, 0.0, 0.0]);
    }
}
