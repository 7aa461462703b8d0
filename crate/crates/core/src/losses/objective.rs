use ndarray::{s, Array2, Axis};

use super::{pair_set, LossConfig, LossError, LossKind, LossResult, MultiviewBatch, Slot};

/// One `weight · logsumexp` reduction over the listed vector pairs.
#[derive(Debug, Clone)]
pub(crate) struct LseGroup {
    pub weight: f64,
    pub pairs: Vec<(Slot, Slot)>,
}

impl LseGroup {
    pub fn touches(&self, slot: Slot) -> bool {
        self.pairs.iter().any(|&(a, b)| a == slot || b == slot)
    }
}

/// How groups are reduced. A numerator group whose pairs all reappear in a
/// denominator group of opposite weight is reduced together with it as
/// `weight · log(1 + S_rest / S_sub)`; computing the two log-sum-exps apart
/// cancels catastrophically once the positives dominate the denominator.
#[derive(Debug, Clone)]
pub(crate) enum Term {
    Single(usize),
    Fused { sub: usize, rest: LseGroup },
}

/// Group structure of a loss for a fixed `(N, M)`; independent of the data.
#[derive(Debug, Clone)]
pub(crate) struct Objective {
    groups: Vec<LseGroup>,
    terms: Vec<Term>,
    tau: f64,
}

impl Objective {
    pub fn new(kind: LossKind, n: usize, m: usize, cfg: &LossConfig) -> Result<Self, LossError> {
        cfg.validate()?;
        if n < 2 {
            return Err(LossError::InsufficientBatch(n));
        }
        let mut groups = Vec::new();
        match kind {
            LossKind::Clip => {
                if m != 1 {
                    return Err(LossError::ClipViews(m));
                }
                clip_groups(n, cfg.symmetric_clip, &mut groups);
            }
            LossKind::Emm => emm_groups(n, m, cfg.denominator_includes_positives, &mut groups),
            LossKind::Imm => {
                if cfg.gamma > 0.0 && m < 2 {
                    return Err(LossError::IntraTermUndefined(m));
                }
                emm_groups(n, m, cfg.denominator_includes_positives, &mut groups);
                // Skipped entirely at gamma = 0 so IMM reproduces EMM bit for bit.
                if cfg.gamma > 0.0 {
                    let pairs = pair_set(m, cfg.pair_set_variant)?;
                    intra_groups(n, &pairs, cfg.gamma, cfg.denominator_includes_positives, &mut groups);
                }
            }
        }
        Ok(Self {
            terms: fuse_groups(&groups),
            groups,
            tau: cfg.tau,
        })
    }

    pub fn groups(&self) -> &[LseGroup] {
        &self.groups
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn logits_into(&self, group: &LseGroup, batch: &MultiviewBatch, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            group
                .pairs
                .iter()
                .map(|&(a, b)| batch.vector(a).dot(&batch.vector(b)) / self.tau),
        );
    }

    pub fn value(&self, batch: &MultiviewBatch) -> Result<f64, LossError> {
        let gram = Gram::new(batch);
        let mut logits = Vec::new();
        let mut rest_logits = Vec::new();
        let mut total = 0.0;
        for term in &self.terms {
            total += match term {
                Term::Single(g) => {
                    let group = &self.groups[*g];
                    gram.logits_into(group, self.tau, &mut logits);
                    group.weight * log_sum_exp(&logits)?
                }
                Term::Fused { sub, rest, .. } => {
                    gram.logits_into(&self.groups[*sub], self.tau, &mut logits);
                    gram.logits_into(rest, self.tau, &mut rest_logits);
                    let (s_sub, s_rest, _) = shifted_weights(&logits, &rest_logits, &mut Vec::new())?;
                    rest.weight * (s_rest / s_sub).ln_1p()
                }
            };
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(LossError::NonFiniteLoss)
        }
    }

    pub fn evaluate(&self, batch: &MultiviewBatch) -> Result<LossResult, LossError> {
        let (n, m, d) = (batch.n(), batch.views(), batch.dim());
        let gram = Gram::new(batch);
        let rows = gram.vectors.nrows();
        // coef[a, b] collects d(loss)/d(<u_a, u_b>).
        let mut coef = Array2::<f64>::zeros((rows, rows));
        let mut logits = Vec::new();
        let mut rest_logits = Vec::new();
        let mut weights = Vec::new();
        let mut total = 0.0;
        // d(w·lse)/d(logit_p) = w·softmax_p, and each logit is ⟨u_a, u_b⟩/τ.
        for term in &self.terms {
            match term {
                Term::Single(g) => {
                    let group = &self.groups[*g];
                    gram.logits_into(group, self.tau, &mut logits);
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !max.is_finite() {
                        return Err(LossError::NonFiniteLoss);
                    }
                    weights.clear();
                    weights.extend(logits.iter().map(|&x| (x - max).exp()));
                    let sum: f64 = weights.iter().sum();
                    total += group.weight * (max + sum.ln());
                    let scale = group.weight / (sum * self.tau);
                    for (&(a, b), &e) in group.pairs.iter().zip(&weights) {
                        coef[[gram.index(a), gram.index(b)]] += scale * e;
                    }
                }
                Term::Fused { sub, rest, .. } => {
                    let sub = &self.groups[*sub];
                    gram.logits_into(sub, self.tau, &mut logits);
                    gram.logits_into(rest, self.tau, &mut rest_logits);
                    let (s_sub, s_rest, split) = shifted_weights(&logits, &rest_logits, &mut weights)?;
                    let s_all = s_sub + s_rest;
                    total += rest.weight * (s_rest / s_sub).ln_1p();
                    // Numerator pairs: w·(e/S_all - e/S_sub) = -w·e·S_rest/(S_all·S_sub).
                    let sub_scale = -rest.weight * s_rest / (s_all * s_sub * self.tau);
                    for (&(a, b), &e) in sub.pairs.iter().zip(&weights[..split]) {
                        coef[[gram.index(a), gram.index(b)]] += sub_scale * e;
                    }
                    let rest_scale = rest.weight / (s_all * self.tau);
                    for (&(a, b), &e) in rest.pairs.iter().zip(&weights[split..]) {
                        coef[[gram.index(a), gram.index(b)]] += rest_scale * e;
                    }
                }
            }
        }
        let sym = &coef + &coef.t();
        let grad = sym.dot(&gram.vectors);
        let grad_mol = grad.slice(s![..n, ..]).to_owned();
        let grad_img = grad
            .slice(s![n.., ..])
            .to_owned()
            .into_shape_with_order((n, m, d))
            .expect("rows are laid out view-minor");
        let finite =
            total.is_finite() && grad_mol.iter().all(|v| v.is_finite()) && grad_img.iter().all(|v| v.is_finite());
        if !finite {
            return Err(LossError::NonFiniteLoss);
        }
        Ok(LossResult {
            value: total,
            grad_mol,
            grad_img,
        })
    }
}

/// All vectors of a batch stacked as rows (molecules, then images view-minor)
/// and their pairwise inner products.
struct Gram {
    n: usize,
    m: usize,
    vectors: Array2<f64>,
    products: Array2<f64>,
}

impl Gram {
    fn new(batch: &MultiviewBatch) -> Self {
        let (n, m, d) = (batch.n(), batch.views(), batch.dim());
        let img = batch.img().to_shape((n * m, d)).expect("contiguous views");
        let vectors = ndarray::concatenate(Axis(0), &[batch.mol().view(), img.view()]).expect("equal widths");
        let products = vectors.dot(&vectors.t());
        Self {
            n,
            m,
            vectors,
            products,
        }
    }

    fn index(&self, slot: Slot) -> usize {
        match slot {
            Slot::Mol(i) => i,
            Slot::Img(i, k) => self.n + i * self.m + k,
        }
    }

    fn logits_into(&self, group: &LseGroup, tau: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            group
                .pairs
                .iter()
                .map(|&(a, b)| self.products[[self.index(a), self.index(b)]] / tau),
        );
    }
}

/// Pair each negative-weight group with a group of opposite weight that
/// contains all of its pairs, when there is one.
fn fuse_groups(groups: &[LseGroup]) -> Vec<Term> {
    let mut used = vec![false; groups.len()];
    let mut terms = Vec::with_capacity(groups.len());
    for (g, sub) in groups.iter().enumerate() {
        if used[g] || sub.weight >= 0.0 {
            continue;
        }
        let sup = (0..groups.len()).find(|&h| {
            !used[h]
                && groups[h].weight == -sub.weight
                && groups[h].pairs.len() > sub.pairs.len()
                && sub.pairs.iter().all(|p| groups[h].pairs.contains(p))
        });
        if let Some(h) = sup {
            used[g] = true;
            used[h] = true;
            let pairs = groups[h]
                .pairs
                .iter()
                .filter(|p| !sub.pairs.contains(p))
                .copied()
                .collect();
            terms.push(Term::Fused {
                sub: g,
                rest: LseGroup {
                    weight: groups[h].weight,
                    pairs,
                },
            });
        }
    }
    terms.extend((0..groups.len()).filter(|&g| !used[g]).map(Term::Single));
    terms
}

/// Exponentials of `sub` then `rest` shifted by their common maximum, into
/// `out`; returns both sums and the index where `rest` starts.
fn shifted_weights(sub: &[f64], rest: &[f64], out: &mut Vec<f64>) -> Result<(f64, f64, usize), LossError> {
    let max = sub.iter().chain(rest).copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(LossError::NonFiniteLoss);
    }
    out.clear();
    out.extend(sub.iter().chain(rest).map(|&x| (x - max).exp()));
    let s_sub: f64 = out[..sub.len()].iter().sum();
    let s_rest: f64 = out[sub.len()..].iter().sum();
    Ok((s_sub, s_rest, sub.len()))
}

/// `log Σ exp(x)` with max subtraction.
pub(crate) fn log_sum_exp(xs: &[f64]) -> Result<f64, LossError> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(LossError::NonFiniteLoss);
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

fn clip_groups(n: usize, symmetric: bool, groups: &mut Vec<LseGroup>) {
    let scale = if symmetric { 0.5 } else { 1.0 } / n as f64;
    for i in 0..n {
        groups.push(LseGroup {
            weight: -scale,
            pairs: vec![(Slot::Mol(i), Slot::Img(i, 0))],
        });
        groups.push(LseGroup {
            weight: scale,
            pairs: (0..n).map(|j| (Slot::Mol(i), Slot::Img(j, 0))).collect(),
        });
    }
    if symmetric {
        for j in 0..n {
            groups.push(LseGroup {
                weight: -scale,
                pairs: vec![(Slot::Mol(j), Slot::Img(j, 0))],
            });
            groups.push(LseGroup {
                weight: scale,
                pairs: (0..n).map(|i| (Slot::Mol(i), Slot::Img(j, 0))).collect(),
            });
        }
    }
}

fn emm_groups(n: usize, m: usize, include_positives: bool, groups: &mut Vec<LseGroup>) {
    let scale = 1.0 / n as f64;
    for i in 0..n {
        groups.push(LseGroup {
            weight: -scale,
            pairs: (0..m).map(|k| (Slot::Mol(i), Slot::Img(i, k))).collect(),
        });
        groups.push(LseGroup {
            weight: scale,
            pairs: (0..n)
                .filter(|&j| include_positives || j != i)
                .flat_map(|j| (0..m).map(move |k| (Slot::Mol(i), Slot::Img(j, k))))
                .collect(),
        });
    }
}

fn intra_groups(
    n: usize,
    view_pairs: &[(usize, usize)],
    gamma: f64,
    include_positives: bool,
    groups: &mut Vec<LseGroup>,
) {
    let scale = gamma / n as f64;
    for i in 0..n {
        groups.push(LseGroup {
            weight: -scale,
            pairs: view_pairs
                .iter()
                .map(|&(a, b)| (Slot::Img(i, a), Slot::Img(i, b)))
                .collect(),
        });
        groups.push(LseGroup {
            weight: scale,
            pairs: (0..n)
                .filter(|&j| include_positives || j != i)
                .flat_map(|j| view_pairs.iter().map(move |&(a, b)| (Slot::Img(i, a), Slot::Img(j, b))))
                .collect(),
        });
    }
}
