//! Single-level fast Gauss transform with source-gradient channels.
//!
//! For sources `y` with strength vectors `S(y)` and targets `x` the transform
//! returns, per target and channel,
//!
//! ```text
//! value  = Σ_y S(y) e^{-|x−y|²/α}
//! grad_j = Σ_y S(y) ∂/∂y_j e^{-|x−y|²/α} = Σ_y S(y) (2 (x_j − y_j) / α) e^{-|x−y|²/α}
//! ```
//!
//! Points are bucketed into lattice boxes of side `2√α`. Source boxes with
//! enough points are expanded in Hermite functions (M2M), translated into a
//! Taylor series about each nearby target box (M2L) and evaluated there (L2L);
//! sparse source boxes are summed directly. Box pairs further apart than the
//! interaction cutoff are skipped.
//!
//! Sources carry a *group* index and `width` strengths; outputs are kept per
//! group so one pass serves every gripper link at once.

pub mod expansion;
pub mod hermite;

use std::collections::{BTreeMap, HashMap};

use crate::{par, Error, Result, Vec3};

pub use expansion::{l2l_evaluate, m2l_translate, m2m_expand, HermiteCoefficients, TaylorCoefficients};
pub use hermite::{hermite_function, hermite_functions, truncation_bound, truncation_order};

/// Per-source strength vectors, grouped.
#[derive(Clone, Debug)]
pub struct ChannelStrengths {
    width: usize,
    groups: usize,
    group_of: Vec<usize>,
    values: Vec<f64>,
    gradients: bool,
}

impl ChannelStrengths {
    /// `values` holds `width` strengths per source, source-major.
    pub fn new(width: usize, groups: usize, group_of: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if width == 0 || groups == 0 {
            return Err(Error::invalid("channel width and group count must be positive"));
        }
        if values.len() != group_of.len() * width {
            return Err(Error::invalid(format!(
                "expected {} strengths for {} sources, got {}",
                group_of.len() * width,
                group_of.len(),
                values.len()
            )));
        }
        if let Some(g) = group_of.iter().find(|&&g| g >= groups) {
            return Err(Error::invalid(format!("group index {g} out of range")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite source strength"));
        }
        Ok(ChannelStrengths { width, groups, group_of, values, gradients: true })
    }

    /// One group, one channel.
    pub fn single(values: Vec<f64>) -> Self {
        let n = values.len();
        ChannelStrengths::new(1, 1, vec![0; n], values).expect("consistent by construction")
    }

    /// Restricts evaluation to value outputs (gradient outputs become zero).
    pub fn values_only(mut self) -> Self {
        self.gradients = false;
        self
    }

    pub fn gradients(&self) -> bool {
        self.gradients
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group(&self, source: usize) -> usize {
        self.group_of[source]
    }

    pub fn strengths(&self, source: usize) -> &[f64] {
        &self.values[source * self.width..(source + 1) * self.width]
    }

    /// `Σ_y |S_c(y)|` over the sources of `group`.
    pub fn abs_sum(&self, group: usize, channel: usize) -> f64 {
        (0..self.len())
            .filter(|&s| self.group_of[s] == group)
            .map(|s| self.strengths(s)[channel].abs())
            .sum()
    }
}

/// Per target, group and channel: `[value, grad_x, grad_y, grad_z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FgtOutput {
    groups: usize,
    width: usize,
    data: Vec<[f64; 4]>,
}

impl FgtOutput {
    fn zeros(targets: usize, groups: usize, width: usize) -> Self {
        FgtOutput { groups, width, data: vec![[0.0; 4]; targets * groups * width] }
    }

    pub fn targets(&self) -> usize {
        self.data.len() / (self.groups * self.width)
    }

    pub fn get(&self, target: usize, group: usize, channel: usize) -> [f64; 4] {
        self.data[(target * self.groups + group) * self.width + channel]
    }

    /// Largest absolute difference per `(group, channel)`, indexed
    /// `group * width + channel`, over values and gradients.
    pub fn max_abs_diff(&self, other: &FgtOutput) -> Vec<f64> {
        assert_eq!(self.data.len(), other.data.len());
        let gw = self.groups * self.width;
        let mut out = vec![0.0f64; gw];
        for (i, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            let k = i % gw;
            for c in 0..4 {
                out[k] = out[k].max((a[c] - b[c]).abs());
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct FgtOptions {
    /// Source boxes with fewer points are summed directly. Defaults to a
    /// quarter of the expansion size `(n0+1)³`.
    pub direct_threshold: Option<usize>,
    /// Fault injection for mutation tests: negates the `C_n` constant.
    #[doc(hidden)]
    pub flip_c_sign: bool,
}

/// Work counters of one evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FgtReport {
    pub order: usize,
    pub source_boxes: usize,
    pub target_boxes: usize,
    pub expanded_boxes: usize,
    pub translations: usize,
    pub direct_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct FgtBox {
    pub key: [i64; 3],
    pub center: Vec3,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BoxDecomposition {
    pub side: f64,
    pub source_boxes: Vec<FgtBox>,
    pub target_boxes: Vec<FgtBox>,
}

fn bucket(points: &[Vec3], side: f64) -> Vec<FgtBox> {
    let mut map: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = [0, 1, 2].map(|k| (p[k] / side).floor() as i64);
        map.entry(key).or_default().push(i);
    }
    map.into_iter()
        .map(|(key, members)| FgtBox {
            key,
            center: Vec3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * side,
            members,
        })
        .collect()
}

/// Lattice boxes of side `2√α`, sorted by lattice index.
pub fn cluster_boxes(sources: &[Vec3], targets: &[Vec3], alpha: f64) -> BoxDecomposition {
    let side = 2.0 * alpha.sqrt();
    BoxDecomposition { side, source_boxes: bucket(sources, side), target_boxes: bucket(targets, side) }
}

/// Smallest point distance `R` beyond which both the kernel and its gradient
/// factor `2R/α` times the kernel fall below `epsilon`.
pub fn point_cutoff(alpha: f64, epsilon: f64) -> f64 {
    let mut r = (alpha * (1.0 / epsilon).ln()).sqrt();
    for _ in 0..100 {
        let gain = (2.0 * r / alpha).max(1.0);
        let next = (alpha * (gain / epsilon).ln()).sqrt();
        if (next - r).abs() <= 1e-15 * r {
            break;
        }
        r = next;
    }
    r
}

/// Box-center distance beyond which a source/target box pair is skipped.
pub fn interaction_cutoff(alpha: f64, epsilon: f64) -> f64 {
    point_cutoff(alpha, epsilon) + 2.0 * (3.0 * alpha).sqrt()
}

fn check_inputs(sources: &[Vec3], strengths: &ChannelStrengths, targets: &[Vec3], alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::invalid("sources and targets must be non-empty"));
    }
    if strengths.len() != sources.len() {
        return Err(Error::invalid(format!(
            "{} sources but strengths for {}",
            sources.len(),
            strengths.len()
        )));
    }
    Ok(())
}

pub fn fgt_evaluate(
    sources: &[Vec3],
    strengths: &ChannelStrengths,
    targets: &[Vec3],
    alpha: f64,
    epsilon: f64,
) -> Result<FgtOutput> {
    fgt_evaluate_with(sources, strengths, targets, alpha, epsilon, &FgtOptions::default()).map(|r| r.0)
}

pub fn fgt_evaluate_with(
    sources: &[Vec3],
    strengths: &ChannelStrengths,
    targets: &[Vec3],
    alpha: f64,
    epsilon: f64,
    options: &FgtOptions,
) -> Result<(FgtOutput, FgtReport)> {
    check_inputs(sources, strengths, targets, alpha)?;
    let order = truncation_order(alpha, epsilon)?;
    let h = alpha.sqrt();
    let boxes = cluster_boxes(sources, targets, alpha);
    let threshold = options.direct_threshold.unwrap_or((order + 1).pow(3) / 4);
    let cutoff = interaction_cutoff(alpha, epsilon);
    let (groups, width) = (strengths.groups(), strengths.width());
    let gw = groups * width;
    let gradients = strengths.gradients();
    let c_sign = if options.flip_c_sign { -1.0 } else { 1.0 };

    let lookup: HashMap<[i64; 3], usize> =
        boxes.source_boxes.iter().enumerate().map(|(i, b)| (b.key, i)).collect();
    let expanded: Vec<usize> = (0..boxes.source_boxes.len())
        .filter(|&i| boxes.source_boxes[i].members.len() >= threshold)
        .collect();
    let mut slot = vec![usize::MAX; boxes.source_boxes.len()];
    for (k, &i) in expanded.iter().enumerate() {
        slot[i] = k;
    }

    // M2M: one coefficient set per (group, channel) present in the box
    let hermite: Vec<Vec<Option<HermiteCoefficients>>> = par::map(&expanded, |&bi| {
        let b = &boxes.source_boxes[bi];
        let pts: Vec<Vec3> = b.members.iter().map(|&s| sources[s]).collect();
        let mut chans: Vec<Vec<f64>> = vec![vec![0.0; b.members.len()]; gw];
        for (k, &s) in b.members.iter().enumerate() {
            let g = strengths.group(s);
            for (c, v) in strengths.strengths(s).iter().enumerate() {
                chans[g * width + c][k] = *v;
            }
        }
        let present: Vec<usize> = (0..gw).filter(|&k| chans[k].iter().any(|v| *v != 0.0)).collect();
        let used: Vec<Vec<f64>> = present.iter().map(|&k| std::mem::take(&mut chans[k])).collect();
        let mut coefs = expansion::expand(b.center, h, &pts, &used, order, gradients, c_sign).into_iter();
        let mut out: Vec<Option<HermiteCoefficients>> = vec![None; gw];
        for k in present {
            out[k] = coefs.next();
        }
        out
    });

    let reach = (cutoff / boxes.side).ceil() as i64;
    let neighbourhood = (2 * reach as usize + 1).pow(3);
    let results: Vec<(Vec<[f64; 4]>, usize, usize)> = par::map(&boxes.target_boxes, |tb| {
        let mut near_direct = Vec::new();
        let mut near_expanded = Vec::new();
        let mut consider = |si: usize| {
            if (boxes.source_boxes[si].center - tb.center).norm() > cutoff {
                return;
            }
            if slot[si] == usize::MAX {
                near_direct.push(si);
            } else {
                near_expanded.push(si);
            }
        };
        if boxes.source_boxes.len() < neighbourhood {
            (0..boxes.source_boxes.len()).for_each(&mut consider);
        } else {
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        if let Some(&si) = lookup.get(&[tb.key[0] + dx, tb.key[1] + dy, tb.key[2] + dz]) {
                            consider(si);
                        }
                    }
                }
            }
        }
        near_direct.sort_unstable();
        near_expanded.sort_unstable();

        let mut out = vec![[0.0; 4]; tb.members.len() * gw];
        let direct_sources: Vec<usize> =
            near_direct.iter().flat_map(|&si| boxes.source_boxes[si].members.iter().copied()).collect();
        let k = 2.0 / alpha;
        for (ti, &t) in tb.members.iter().enumerate() {
            let x = targets[t];
            let acc = &mut out[ti * gw..(ti + 1) * gw];
            for &s in &direct_sources {
                let d = x - sources[s];
                let e = (-d.norm_squared() / alpha).exp();
                let base = strengths.group(s) * width;
                if gradients {
                    let ke = k * e;
                    let gvec = [e, ke * d.x, ke * d.y, ke * d.z];
                    for (c, sv) in strengths.strengths(s).iter().enumerate() {
                        let a = &mut acc[base + c];
                        for q in 0..4 {
                            a[q] += sv * gvec[q];
                        }
                    }
                } else {
                    for (c, sv) in strengths.strengths(s).iter().enumerate() {
                        acc[base + c][0] += sv * e;
                    }
                }
            }
        }
        let pairs = direct_sources.len() * tb.members.len();

        if !near_expanded.is_empty() {
            let mut taylor: Vec<Option<TaylorCoefficients>> = vec![None; gw];
            for &si in &near_expanded {
                let sb = &boxes.source_boxes[si];
                let tr = expansion::Translation::new(&sb.center, &tb.center, h, order);
                for (kk, coef) in hermite[slot[si]].iter().enumerate() {
                    let Some(coef) = coef else { continue };
                    let into = taylor[kk]
                        .get_or_insert_with(|| TaylorCoefficients::zeros(order, tb.center, h, gradients));
                    expansion::m2l_with(&tr, coef, into);
                }
            }
            for (ti, &t) in tb.members.iter().enumerate() {
                for (kk, tc) in taylor.iter().enumerate() {
                    let Some(tc) = tc else { continue };
                    let v = l2l_evaluate(tc, &targets[t]);
                    let a = &mut out[ti * gw + kk];
                    for q in 0..4 {
                        a[q] += v[q];
                    }
                }
            }
        }
        (out, pairs, near_expanded.len())
    });

    let mut output = FgtOutput::zeros(targets.len(), groups, width);
    let mut report = FgtReport {
        order,
        source_boxes: boxes.source_boxes.len(),
        target_boxes: boxes.target_boxes.len(),
        expanded_boxes: expanded.len(),
        ..Default::default()
    };
    for (tb, (vals, pairs, translations)) in boxes.target_boxes.iter().zip(results) {
        for (ti, &t) in tb.members.iter().enumerate() {
            output.data[t * gw..(t + 1) * gw].copy_from_slice(&vals[ti * gw..(ti + 1) * gw]);
        }
        report.direct_pairs += pairs;
        report.translations += translations;
    }
    Ok((output, report))
}

/// Exact O(NM) summation with the same output contract as [`fgt_evaluate`].
pub fn brute_force_sum(
    sources: &[Vec3],
    strengths: &ChannelStrengths,
    targets: &[Vec3],
    alpha: f64,
) -> Result<FgtOutput> {
    check_inputs(sources, strengths, targets, alpha)?;
    let (groups, width) = (strengths.groups(), strengths.width());
    let gw = groups * width;
    let rows: Vec<Vec<[f64; 4]>> = par::map(targets, |x| {
        let mut row = vec![[0.0; 4]; gw];
        for (s, y) in sources.iter().enumerate() {
            let diff = x - y;
            let kernel = (-diff.dot(&diff) / alpha).exp();
            let slope = 2.0 * kernel / alpha;
            for c in 0..width {
                let sv = strengths.strengths(s)[c];
                let cell = &mut row[strengths.group(s) * width + c];
                cell[0] += sv * kernel;
                if strengths.gradients() {
                    cell[1] += sv * slope * diff.x;
                    cell[2] += sv * slope * diff.y;
                    cell[3] += sv * slope * diff.z;
                }
            }
        }
        row
    });
    Ok(FgtOutput { groups, width, data: rows.into_iter().flatten().collect() })
}
