use super::{GrayPlane, PreprocessError};

#[derive(Debug, Clone, PartialEq)]
pub struct Resized {
    pub plane: GrayPlane,
    /// The centered square was smaller than the target.
    pub upscaled: bool,
}

/// Crop the largest centered square, then resize it bilinearly to
/// `target × target`.
///
/// An odd margin leaves the extra pixel on the bottom/right. Sampling uses
/// pixel centers: output pixel `o` reads source coordinate
/// `(o + 0.5) · side / target − 0.5`, clamped to the image.
pub fn center_crop_resize(plane: &GrayPlane, target: usize) -> Result<Resized, PreprocessError> {
    if target == 0 {
        return Err(PreprocessError::EmptyPlane);
    }
    let side = plane.width().min(plane.height());
    let left = (plane.width() - side) / 2;
    let top = (plane.height() - side) / 2;

    let taps = axis_taps(side, target);
    let mut out = Vec::with_capacity(target * target);
    for &(y0, y1, fy) in &taps {
        let row0 = &plane.pixels()[(top + y0) * plane.width() + left..][..side];
        let row1 = &plane.pixels()[(top + y1) * plane.width() + left..][..side];
        for &(x0, x1, fx) in &taps {
            let upper = lerp(f64::from(row0[x0]), f64::from(row0[x1]), fx);
            let lower = lerp(f64::from(row1[x0]), f64::from(row1[x1]), fx);
            out.push(lerp(upper, lower, fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Resized {
        plane: GrayPlane::new(target, target, out)?,
        upscaled: side < target,
    })
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

fn axis_taps(side: usize, target: usize) -> Vec<(usize, usize, f64)> {
    let scale = side as f64 / target as f64;
    let last = (side - 1) as f64;
    (0..target)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(side - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bilinear resampling written as a tent-filter sum over every source
    /// pixel: weight `max(0, 1 - |x - src_x|) · max(0, 1 - |y - src_y|)`.
    fn tent_oracle(plane: &GrayPlane, target: usize) -> Vec<f64> {
        let side = plane.width().min(plane.height());
        let (left, top) = ((plane.width() - side) / 2, (plane.height() - side) / 2);
        let coord = |o: usize| ((o as f64 + 0.5) * side as f64 / target as f64 - 0.5).clamp(0.0, (side - 1) as f64);
        let mut out = Vec::new();
        for oy in 0..target {
            for ox in 0..target {
                let (sx, sy) = (coord(ox), coord(oy));
                let mut acc = 0.0;
                for y in 0..side {
                    for x in 0..side {
                        let w = (1.0 - (x as f64 - sx).abs()).max(0.0) * (1.0 - (y as f64 - sy).abs()).max(0.0);
                        acc += w * f64::from(plane.get(left + x, top + y));
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn constant_plane_stays_constant() {
        let plane = GrayPlane::filled(1000, 1000, 77).unwrap();
        let r = center_crop_resize(&plane, 768).unwrap();
        assert!(!r.upscaled);
        assert_eq!(r.plane.width(), 768);
        assert!(r.plane.pixels().iter().all(|&v| v == 77));
    }

    #[test]
    fn pixel_reduction_factor() {
        let factor: f64 = (1000.0 * 1000.0) / (768.0 * 768.0);
        assert!((factor - 1.695).abs() < 1e-3, "{factor}");
    }

    #[test]
    fn checkerboard_matches_tent_oracle() {
        let board = GrayPlane::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 }).unwrap();
        let r = center_crop_resize(&board, 2).unwrap();
        let oracle = tent_oracle(&board, 2);
        for (got, want) in r.plane.pixels().iter().zip(&oracle) {
            assert!((f64::from(*got) - want).abs() <= 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn irregular_planes_match_tent_oracle() {
        for (w, h, t) in [(13, 9, 5), (10, 17, 7), (6, 6, 11), (31, 24, 16)] {
            let plane = GrayPlane::from_fn(w, h, |x, y| ((x * 53 + y * y * 17 + 3) % 256) as u8).unwrap();
            let r = center_crop_resize(&plane, t).unwrap();
            assert_eq!(r.upscaled, w.min(h) < t);
            for (got, want) in r.plane.pixels().iter().zip(tent_oracle(&plane, t)) {
                assert!(
                    (f64::from(*got) - want).abs() <= 0.5 + 1e-9,
                    "{w}x{h}->{t}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn odd_margin_goes_bottom_right() {
        // 5 wide, 2 tall: square side 2, margin 3 → left 1, right 2.
        let plane = GrayPlane::from_fn(5, 2, |x, _| (x * 10) as u8).unwrap();
        let r = center_crop_resize(&plane, 2).unwrap();
        assert_eq!(r.plane.pixels(), &[10, 20, 10, 20]);
    }

    #[test]
    fn empty_plane_is_rejected() {
        assert!(matches!(GrayPlane::new(0, 3, vec![]), Err(PreprocessError::EmptyPlane)));
    }
}
