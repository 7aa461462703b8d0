use super::objective::Term;
use super::{LossConfig, LossError, LossKind, MultiviewBatch, Objective, Slot};

pub const MIN_STEP: f64 = 1e-7;
pub const MAX_STEP: f64 = 1e-3;

const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: f64,
    pub worst_slot: Slot,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compare the analytic gradient against central differences at every input
/// coordinate.
///
/// The difference `L(x + h) - L(x - h)` is accumulated group by group as
/// `log(S⁺ / S⁻)` with `S⁺ - S⁻` summed term-wise through `expm1`. Terms the
/// perturbation does not touch then cancel exactly instead of leaving rounding
/// noise of the order of the full loss value, which would otherwise swamp
/// coordinates whose true derivative is tiny (saturated softmax at small `τ`).
pub fn grad_check(
    kind: LossKind,
    batch: &MultiviewBatch,
    cfg: &LossConfig,
    eps: f64,
) -> Result<GradCheckReport, LossError> {
    if !(MIN_STEP..=MAX_STEP).contains(&eps) {
        return Err(LossError::InvalidStep(eps));
    }
    let objective = Objective::new(kind, batch.n(), batch.views(), cfg)?;
    let analytic = objective.evaluate(batch)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_slot: Slot::Mol(0),
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut logits = Logits::default();
    for slot in batch.slots() {
        let touching: Vec<&Term> = objective
            .terms()
            .iter()
            .filter(|t| touches(&objective, t, slot))
            .collect();
        for c in 0..batch.dim() {
            let mut plus = batch.clone();
            let mut minus = batch.clone();
            *plus.coord_mut(slot, c) += eps;
            *minus.coord_mut(slot, c) -= eps;
            let step = plus.vector(slot)[c] - minus.vector(slot)[c];

            let diff: f64 = touching
                .iter()
                .map(|t| difference(&objective, t, &plus, &minus, &mut logits))
                .sum();
            let numeric = diff / step;
            let exact = match slot {
                Slot::Mol(i) => analytic.grad_mol[[i, c]],
                Slot::Img(i, k) => analytic.grad_img[[i, k, c]],
            };
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_FLOOR);
            if !rel.is_finite() {
                return Err(LossError::NonFiniteLoss);
            }
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.coords_checked == 1 {
                report.max_rel_error = rel;
                report.worst_slot = slot;
                report.worst_coord = c;
                report.analytic = exact;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn touches(objective: &Objective, term: &Term, slot: Slot) -> bool {
    match term {
        Term::Single(g) => objective.groups()[*g].touches(slot),
        Term::Fused { sub, rest, .. } => objective.groups()[*sub].touches(slot) || rest.touches(slot),
    }
}

/// Contribution of one term to `L(plus) - L(minus)`.
fn difference(
    objective: &Objective,
    term: &Term,
    plus: &MultiviewBatch,
    minus: &MultiviewBatch,
    buf: &mut Logits,
) -> f64 {
    match term {
        Term::Single(g) => {
            let g = &objective.groups()[*g];
            objective.logits_into(g, plus, &mut buf.plus);
            objective.logits_into(g, minus, &mut buf.minus);
            g.weight * log_ratio(&buf.plus, &buf.minus)
        }
        Term::Fused { sub, rest, .. } => {
            let sub = &objective.groups()[*sub];
            objective.logits_into(sub, plus, &mut buf.plus);
            objective.logits_into(sub, minus, &mut buf.minus);
            objective.logits_into(rest, plus, &mut buf.rest_plus);
            objective.logits_into(rest, minus, &mut buf.rest_minus);
            rest.weight * fused_log_ratio(&buf.plus, &buf.minus, &buf.rest_plus, &buf.rest_minus)
        }
    }
}

#[derive(Default)]
struct Logits {
    plus: Vec<f64>,
    minus: Vec<f64>,
    rest_plus: Vec<f64>,
    rest_minus: Vec<f64>,
}

/// `Σ exp(minus - shift)` and `Σ exp(minus - shift) · expm1(plus - minus)`.
fn shifted_sums(plus: &[f64], minus: &[f64], shift: f64) -> (f64, f64) {
    plus.iter().zip(minus).fold((0.0, 0.0), |(base, delta), (&p, &m)| {
        let w = (m - shift).exp();
        (base + w, delta + w * (p - m).exp_m1())
    })
}

/// Change of `log(S_sub + S_rest) - log(S_sub)` between the minus and plus
/// logits. With `a = δ_all / S_all` and `b = δ_sub / S_sub` the change is
/// `ln_1p((a - b) / (1 + b))`, and `a - b` is formed from cross products so
/// that no two large quantities are subtracted.
fn fused_log_ratio(sub_plus: &[f64], sub_minus: &[f64], rest_plus: &[f64], rest_minus: &[f64]) -> f64 {
    let shift = sub_minus
        .iter()
        .chain(rest_minus)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (s_sub, d_sub) = shifted_sums(sub_plus, sub_minus, shift);
    let (s_rest, d_rest) = shifted_sums(rest_plus, rest_minus, shift);
    let a_minus_b = (d_rest * s_sub - d_sub * s_rest) / ((s_sub + s_rest) * s_sub);
    (a_minus_b / (1.0 + d_sub / s_sub)).ln_1p()
}

/// `logsumexp(plus) - logsumexp(minus)` for two logit vectors of equal length.
fn log_ratio(plus: &[f64], minus: &[f64]) -> f64 {
    let shift = minus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut base = 0.0;
    let mut delta = 0.0;
    for (&p, &m) in plus.iter().zip(minus) {
        let w = (m - shift).exp();
        base += w;
        delta += w * (p - m).exp_m1();
    }
    (delta / base).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_ratio_matches_direct_difference() {
        let minus = [0.3, -1.2, 2.5, 0.0];
        let plus = [0.31, -1.2, 2.45, 0.1];
        let lse = |xs: &[f64]| xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        let direct = lse(&plus) - lse(&minus);
        assert!((log_ratio(&plus, &minus) - direct).abs() < 1e-14);
        assert_eq!(log_ratio(&minus, &minus), 0.0);
    }

    #[test]
    fn fused_ratio_matches_separate_groups() {
        let lse = |xs: &[f64]| xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        let (sp, sm, rp, rm) = ([1.3, 0.2], [1.2, 0.25], [0.4], [0.45]);
        let separate = (lse(&[1.3, 0.2, 0.4]) - lse(&[1.2, 0.25, 0.45])) - (lse(&sp) - lse(&sm));
        assert!((fused_log_ratio(&sp, &sm, &rp, &rm) - separate).abs() < 1e-14);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let b = MultiviewBatch::random_unit(2, 1, 2, 0).unwrap();
        let cfg = LossConfig::default();
        for eps in [1e-8, 1e-2, 0.0, f64::NAN] {
            assert!(matches!(
                grad_check(LossKind::Clip, &b, &cfg, eps),
                Err(LossError::InvalidStep(_))
            ));
        }
    }
}
