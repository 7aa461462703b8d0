use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Byte counts after each reduction stage and the per-stage factors.
///
/// Stages telescope, so `bytes_in / bytes_out` is the product of the four
/// factors:
///
/// | stage    | before                          | after                        |
/// |----------|---------------------------------|------------------------------|
/// | bitdepth | 16-bit pixels of all views      | same pixels at 8 bits        |
/// | sampling | 8-bit pixels of all views       | 8-bit pixels of kept views   |
/// | resize   | kept views at source resolution | kept views at target size    |
/// | encoding | raw 8-bit target planes         | PNG file bytes               |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub bytes_in: u64,
    pub bytes_8bit: u64,
    pub bytes_sampled: u64,
    pub bytes_resized: u64,
    pub bytes_out: u64,
    pub factor_bitdepth: f64,
    pub factor_sampling: f64,
    pub factor_resize: f64,
    pub factor_encoding: f64,
}

/// `before / after`, or 1 when there is nothing to compare.
fn ratio(before: u64, after: u64) -> f64 {
    if before == 0 || after == 0 {
        1.0
    } else {
        before as f64 / after as f64
    }
}

impl CompressionStats {
    pub fn from_stage_bytes(
        bytes_in: u64,
        bytes_8bit: u64,
        bytes_sampled: u64,
        bytes_resized: u64,
        bytes_out: u64,
    ) -> Self {
        Self {
            bytes_in,
            bytes_8bit,
            bytes_sampled,
            bytes_resized,
            bytes_out,
            factor_bitdepth: ratio(bytes_in, bytes_8bit),
            factor_sampling: ratio(bytes_8bit, bytes_sampled),
            factor_resize: ratio(bytes_sampled, bytes_resized),
            factor_encoding: ratio(bytes_resized, bytes_out),
        }
    }

    pub fn cumulative_factor(&self) -> f64 {
        ratio(self.bytes_in, self.bytes_out)
    }

    pub fn product_of_factors(&self) -> f64 {
        self.factor_bitdepth * self.factor_sampling * self.factor_resize * self.factor_encoding
    }
}

impl Default for CompressionStats {
    fn default() -> Self {
        Self::from_stage_bytes(0, 0, 0, 0, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: &'static str,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub factor: f64,
    pub cumulative: f64,
}

pub fn stage_rows(stats: &CompressionStats) -> Vec<StageRow> {
    let stages = [
        ("bitdepth", stats.bytes_in, stats.bytes_8bit, stats.factor_bitdepth),
        ("sampling", stats.bytes_8bit, stats.bytes_sampled, stats.factor_sampling),
        ("resize", stats.bytes_sampled, stats.bytes_resized, stats.factor_resize),
        ("encoding", stats.bytes_resized, stats.bytes_out, stats.factor_encoding),
    ];
    let mut cumulative = 1.0;
    stages
        .into_iter()
        .map(|(stage, bytes_before, bytes_after, factor)| {
            cumulative *= factor;
            StageRow {
                stage,
                bytes_before,
                bytes_after,
                factor,
                cumulative,
            }
        })
        .collect()
}

pub fn report_csv(stats: &CompressionStats) -> String {
    let mut out = String::from("stage,bytes_before,bytes_after,factor,cumulative\n");
    for row in stage_rows(stats) {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            row.stage, row.bytes_before, row.bytes_after, row.factor, row.cumulative
        );
    }
    let _ = writeln!(
        out,
        "total,{},{},{:.6},{:.6}",
        stats.bytes_in,
        stats.bytes_out,
        stats.cumulative_factor(),
        stats.cumulative_factor()
    );
    out
}

pub fn report_text(stats: &CompressionStats) -> String {
    let mut out = format!(
        "{:<10} {:>16} {:>16} {:>8} {:>10}\n",
        "stage", "bytes before", "bytes after", "factor", "cumulative"
    );
    for row in stage_rows(stats) {
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>8.3} {:>10.3}",
            row.stage, row.bytes_before, row.bytes_after, row.factor, row.cumulative
        );
    }
    let _ = writeln!(
        out,
        "{:<10} {:>16} {:>16} {:>8.3} {:>10.3}",
        "total",
        stats.bytes_in,
        stats.bytes_out,
        stats.cumulative_factor(),
        stats.cumulative_factor()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_telescope() {
        let s = CompressionStats::from_stage_bytes(2_000, 1_000, 600, 354, 190);
        assert_eq!(s.factor_bitdepth, 2.0);
        let rel = (s.cumulative_factor() - s.product_of_factors()).abs() / s.cumulative_factor();
        assert!(rel < 1e-12);
        let rows = stage_rows(&s);
        assert!((rows[3].cumulative - s.cumulative_factor()).abs() < 1e-9);
    }

    #[test]
    fn empty_report_has_no_division_by_zero() {
        let s = CompressionStats::default();
        assert_eq!(s.cumulative_factor(), 1.0);
        assert!(stage_rows(&s).iter().all(|r| r.factor == 1.0 && r.bytes_after == 0));
        let csv = report_csv(&s);
        assert!(!csv.contains("NaN") && !csv.contains("inf"));
        assert_eq!(csv.lines().count(), 6);
        assert!(report_text(&s).contains("total"));
    }

    #[test]
    fn paper_scale_totals() {
        // 84.7 TB condensed to 7.4 TB.
        let s = CompressionStats::from_stage_bytes(84_700_000_000_000, 0, 0, 0, 7_400_000_000_000);
        assert!(
            (s.cumulative_factor() - 11.45).abs() < 0.01,
            "{}",
            s.cumulative_factor()
        );
        assert!(report_csv(&s)
            .lines()
            .last()
            .unwrap()
            .starts_with("total,84700000000000,7400000000000,11.44"));
    }
}
