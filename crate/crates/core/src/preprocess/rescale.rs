use super::{GrayPlane, PreprocessError, RawPlane};

/// Result of mapping a 16-bit plane to 8 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub plane: GrayPlane,
    pub low: u16,
    pub high: u16,
    /// The two percentiles coincided; every output pixel is 0.
    pub degenerate: bool,
}

/// Nearest-rank percentile: the smallest value whose rank reaches
/// `ceil(p/100 · n)` (clamped to `1..=n`).
pub fn nearest_rank_percentile(histogram: &[u64; 65536], count: u64, p: f64) -> u16 {
    let rank = ((p / 100.0 * count as f64).ceil() as u64).clamp(1, count);
    let mut seen = 0;
    for (value, &c) in histogram.iter().enumerate() {
        seen += c;
        if seen >= rank {
            return value as u16;
        }
    }
    u16::MAX
}

pub fn rescale_16_to_8(plane: &RawPlane, p_low: f64, p_high: f64) -> Result<Rescaled, PreprocessError> {
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low >= p_high {
        return Err(PreprocessError::InvalidPercentiles {
            low: p_low,
            high: p_high,
        });
    }
    let mut histogram = Box::new([0u64; 65536]);
    for &v in plane.pixels() {
        histogram[v as usize] += 1;
    }
    let count = plane.pixels().len() as u64;
    let low = nearest_rank_percentile(&histogram, count, p_low);
    let high = nearest_rank_percentile(&histogram, count, p_high);
    let (w, h) = (plane.width(), plane.height());
    if high <= low {
        return Ok(Rescaled {
            plane: GrayPlane::filled(w, h, 0)?,
            low,
            high,
            degenerate: true,
        });
    }
    // One lookup per distinct 16-bit value keeps the mapping identical for equal inputs.
    let span = f64::from(high - low);
    let lut: Vec<u8> = (0..=u16::MAX)
        .map(|x| {
            let t = ((f64::from(x) - f64::from(low)) / span).clamp(0.0, 1.0);
            (255.0 * t).round() as u8
        })
        .collect();
    let pixels = plane.pixels().iter().map(|&v| lut[v as usize]).collect();
    Ok(Rescaled {
        plane: GrayPlane::new(w, h, pixels)?,
        low,
        high,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sort-based nearest-rank percentile, independent of the histogram walk.
    fn sorted_percentile(values: &[u16], p: f64) -> u16 {
        let mut v = values.to_vec();
        v.sort_unstable();
        let rank = ((p / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[rank - 1]
    }

    #[test]
    fn ramp_spans_full_range_with_one_percent_tails() {
        let plane = RawPlane::from_fn(256, 256, |x, y| (y * 256 + x) as u16).unwrap();
        let r = rescale_16_to_8(&plane, 1.0, 99.0).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.low, sorted_percentile(plane.pixels(), 1.0));
        assert_eq!(r.high, sorted_percentile(plane.pixels(), 99.0));
        assert_eq!((r.low, r.high), (655, 64880));
        let out = r.plane.pixels();
        assert_eq!(*out.iter().min().unwrap(), 0);
        assert_eq!(*out.iter().max().unwrap(), 255);
        // Inputs at or beyond the percentiles: exactly 656 pixels at each end.
        let below = plane.pixels().iter().filter(|&&v| v <= r.low).count();
        let above = plane.pixels().iter().filter(|&&v| v >= r.high).count();
        assert_eq!((below, above), (656, 656));
        let n = out.len() as f64;
        let zeros = out.iter().filter(|&&v| v == 0).count() as f64 / n;
        let full = out.iter().filter(|&&v| v == 255).count() as f64 / n;
        assert!((0.01..0.013).contains(&zeros), "{zeros}");
        assert!((0.01..0.013).contains(&full), "{full}");
    }

    #[test]
    fn constant_plane_is_degenerate_zero() {
        let plane = RawPlane::filled(32, 16, 500).unwrap();
        let r = rescale_16_to_8(&plane, 1.0, 99.0).unwrap();
        assert!(r.degenerate);
        assert!(r.plane.pixels().iter().all(|&v| v == 0));
    }

    #[test]
    fn hot_pixel_saturates_without_compressing_the_bulk() {
        let mut plane = RawPlane::from_fn(100, 100, |x, y| ((x * 37 + y * 11) % 1001) as u16)
            .unwrap()
            .into_pixels();
        plane[4321] = 65535;
        let plane = RawPlane::new(100, 100, plane).unwrap();
        let r = rescale_16_to_8(&plane, 1.0, 99.0).unwrap();
        assert_eq!(r.high, sorted_percentile(plane.pixels(), 99.0));
        assert!(r.high <= 1000);
        assert_eq!(r.plane.pixels()[4321], 255);
        // Bulk still uses most of the output range.
        let distinct: std::collections::BTreeSet<u8> = r.plane.pixels().iter().copied().collect();
        assert!(distinct.len() > 250, "{}", distinct.len());
    }

    #[test]
    fn rejects_bad_percentiles() {
        let plane = RawPlane::filled(2, 2, 1).unwrap();
        for (lo, hi) in [(50.0, 50.0), (60.0, 40.0), (-1.0, 99.0), (1.0, 101.0)] {
            assert!(matches!(
                rescale_16_to_8(&plane, lo, hi),
                Err(PreprocessError::InvalidPercentiles { .. })
            ));
        }
    }

    #[test]
    fn percentile_agrees_with_sorting_on_irregular_data() {
        let plane = RawPlane::from_fn(37, 23, |x, y| ((x * x * 131 + y * 977) % 4093) as u16).unwrap();
        let mut hist = [0u64; 65536];
        for &v in plane.pixels() {
            hist[v as usize] += 1;
        }
        for p in [0.0, 0.5, 1.0, 25.0, 50.0, 99.0, 99.9, 100.0] {
            assert_eq!(
                nearest_rank_percentile(&hist, plane.pixels().len() as u64, p),
                sorted_percentile(plane.pixels(), p),
                "p={p}"
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rescale_is_monotone(pixels in proptest::collection::vec(any::<u16>(), 1..400)) {
                let n = pixels.len();
                let plane = RawPlane::new(n, 1, pixels.clone()).unwrap();
                let out = rescale_16_to_8(&plane, 1.0, 99.0).unwrap().plane.into_pixels();
                for i in 0..n {
                    for j in 0..n {
                        if pixels[i] <= pixels[j] {
                            prop_assert!(out[i] <= out[j]);
                        }
                    }
                }
            }
        }
    }
}
