//! Empirical check of the bound
//! `|AURC(f, c) - AURC(f, kappa)| <= L_cons(c, kappa) / (m * min D_c)`.
//!
//! Ranks are 1-based with rank 1 for the highest score. `kappa` must be
//! injective; consistency ties are resolved by [`align_consistency_ranking`],
//! which searches all orderings inside each tie group. That search is
//! exponential, so instances are capped at a small size.
//!
//! AURC values here are computed exactly over the common denominator
//! `m * lcm(1..=m)` so the AURC and E-AURC gaps compare bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::ConsistencyLog;
use crate::error::{Error, Result};
use crate::losses::consistency_ranking_loss_full;
use crate::numerics::{argmax, softmax};

pub const DEFAULT_ENUMERATION_CAP: usize = 8;
/// Largest instance the tie-group search will accept even when asked to.
pub const MAX_ENUMERATION_CAP: usize = 10;
const HOLD_SLACK: f64 = 1e-12;

/// `rank[i]` is the 1-based position of sample `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingAssignment {
    rank: Vec<usize>,
}

impl RankingAssignment {
    pub fn from_order(order: &[usize]) -> Self {
        let mut rank = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos + 1;
        }
        RankingAssignment { rank }
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }

    pub fn rank(&self, i: usize) -> usize {
        self.rank[i]
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    /// Sample at each position, i.e. the inverse permutation.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.rank.len()];
        for (i, &r) in self.rank.iter().enumerate() {
            order[r - 1] = i;
        }
        order
    }
}

/// Descending-score ranking; equal scores keep ascending sample order.
pub fn rank_scores(scores: &[f64]) -> Result<RankingAssignment> {
    if scores.is_empty() {
        return Err(Error::Contract("cannot rank an empty score list".into()));
    }
    Ok(RankingAssignment::from_order(&crate::metrics::descending_order(scores)))
}

/// Positions (sorted) that hold correct samples.
fn correct_positions(ranking: &RankingAssignment, correct: &[bool]) -> Vec<usize> {
    let mut h: Vec<usize> = (0..ranking.len())
        .filter(|&i| correct[i])
        .map(|i| ranking.rank(i))
        .collect();
    h.sort_unstable();
    h
}

/// Minimum over bijections between two equal-size rank sets of the total
/// displacement; attained by matching both sets in sorted order.
fn matching_cost(h_kappa: &[usize], h_c: &[usize]) -> usize {
    h_kappa.iter().zip(h_c).map(|(&a, &b)| a.abs_diff(b)).sum()
}

/// Chooses the consistency ranking among all orders compatible with `c`
/// (higher `c` first, ties free) whose correct-sample positions are closest
/// to those of `kappa_rank`. Ties between candidates keep the first one in
/// lexicographic enumeration order.
pub fn align_consistency_ranking(
    kappa_rank: &RankingAssignment,
    c: &[f64],
    correct: &[bool],
    cap: usize,
) -> Result<RankingAssignment> {
    let m = c.len();
    if kappa_rank.len() != m || correct.len() != m {
        return Err(Error::Shape("ranking, targets and outcomes differ in length".into()));
    }
    if m > cap {
        return Err(Error::Contract(format!(
            "{m} samples exceed the enumeration cap of {cap}"
        )));
    }
    let base = crate::metrics::descending_order(c);
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && c[base[end]] == c[base[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    let h_kappa = correct_positions(kappa_rank, correct);
    let mut order = base.clone();
    let mut best: Option<(usize, Vec<usize>)> = None;
    loop {
        let candidate = RankingAssignment::from_order(&order);
        let cost = matching_cost(&h_kappa, &correct_positions(&candidate, correct));
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, order.clone()));
            if cost == 0 {
                break;
            }
        }
        // odometer over per-group permutations, last group fastest
        let mut advanced = false;
        for &(s, e) in groups.iter().rev() {
            if next_permutation(&mut order[s..e]) {
                advanced = true;
                break;
            }
            // next_permutation wrapped this group back to ascending order
        }
        if !advanced {
            break;
        }
    }
    Ok(RankingAssignment::from_order(&best.unwrap().1))
}

/// Lexicographic successor; on the last permutation it resets to sorted order
/// and returns false.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremQuantities {
    /// Number of cut-offs `i` where the counts of correct samples in the top `i` differ.
    pub h_c: usize,
    /// Smallest critical consistency gap; `None` when the set is empty.
    pub min_dc: Option<f64>,
    /// Correct samples ranked below at least one error by consistency.
    pub k_stat: usize,
    /// Length of the all-correct prefix of the consistency ranking.
    pub f_r: usize,
    pub rank_kappa: RankingAssignment,
    pub rank_c: RankingAssignment,
}

pub fn theorem_quantities(
    kappa: &[f64],
    c: &[f64],
    errors: &[bool],
    cap: usize,
) -> Result<TheoremQuantities> {
    let m = kappa.len();
    if c.len() != m || errors.len() != m {
        return Err(Error::Shape("kappa, c and errors differ in length".into()));
    }
    let correct: Vec<bool> = errors.iter().map(|&e| !e).collect();
    let rank_kappa = rank_scores(kappa)?;
    let rank_c = align_consistency_ranking(&rank_kappa, c, &correct, cap)?;
    let order_kappa = rank_kappa.order();
    let order_c = rank_c.order();

    let mut h_c = 0;
    let (mut tk, mut tc) = (0usize, 0usize);
    for pos in 0..m {
        tk += correct[order_kappa[pos]] as usize;
        tc += correct[order_c[pos]] as usize;
        h_c += (tk != tc) as usize;
    }

    let f_r = order_c.iter().take_while(|&&i| correct[i]).count();
    let k_stat = correct.iter().filter(|&&t| t).count() - f_r;

    // gamma maps the j-th smallest correct kappa-rank to the j-th smallest
    // correct c-rank. Neighbours falling outside 1..=m are skipped.
    let h_kappa = correct_positions(&rank_kappa, &correct);
    let h_cons = correct_positions(&rank_c, &correct);
    let mut min_dc: Option<f64> = None;
    for (&r, &i) in h_kappa.iter().zip(&h_cons) {
        let j = match r.cmp(&i) {
            std::cmp::Ordering::Equal => continue,
            std::cmp::Ordering::Greater => i + 1,
            std::cmp::Ordering::Less => i - 1,
        };
        if j < 1 || j > m {
            continue;
        }
        let (xi, xj) = (order_c[i - 1], order_c[j - 1]);
        if correct[xj] {
            continue;
        }
        let gap = (c[xi] - c[xj]).abs();
        min_dc = Some(min_dc.map_or(gap, |d: f64| d.min(gap)));
    }
    Ok(TheoremQuantities {
        h_c,
        min_dc,
        k_stat,
        f_r,
        rank_kappa,
        rank_c,
    })
}

fn lcm_up_to(m: usize) -> i128 {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    (1..=m as i128).fold(1, |acc, k| acc / gcd(acc, k) * k)
}

/// `m * lcm(1..=m) * AURC` for the error sequence in ranking order.
fn scaled_aurc(errors_in_order: impl Iterator<Item = bool>, lcm: i128) -> i128 {
    let mut errs = 0i128;
    let mut total = 0i128;
    for (j, e) in errors_in_order.enumerate() {
        errs += e as i128;
        total += errs * (lcm / (j as i128 + 1));
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub m: usize,
    pub aurc_kappa: f64,
    pub aurc_c: f64,
    /// `|AURC(c) - AURC(kappa)|`.
    pub lhs: f64,
    /// `|E-AURC(c) - E-AURC(kappa)|`, computed independently of `lhs`.
    pub lhs_e_aurc: f64,
    pub h_c: usize,
    /// `None` encodes an empty critical-gap set (infinite minimum).
    pub min_dc: Option<f64>,
    pub loss_full: f64,
    /// `None` encodes an infinite right-hand side (vacuous bound).
    pub rhs: Option<f64>,
    pub holds: bool,
    pub k_stat: usize,
    pub f_r: usize,
    /// The right-hand side is infinite because no finite positive gap exists.
    pub vacuous: bool,
}

/// Evaluates both sides of the bound. `kappa` must not repeat values.
pub fn certify_bound(kappa: &[f64], c: &[f64], errors: &[bool], cap: usize) -> Result<BoundCertificate> {
    let m = kappa.len();
    if m == 0 {
        return Err(Error::Contract("empty instance".into()));
    }
    let mut sorted = kappa.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("confidence scores must be distinct".into()));
    }
    let q = theorem_quantities(kappa, c, errors, cap)?;
    let lcm = lcm_up_to(m);
    let denom = (m as i128 * lcm) as f64;
    let a_kappa = scaled_aurc(q.rank_kappa.order().into_iter().map(|i| errors[i]), lcm);
    let a_c = scaled_aurc(q.rank_c.order().into_iter().map(|i| errors[i]), lcm);
    let n_correct = errors.iter().filter(|&&e| !e).count();
    let a_opt = scaled_aurc((0..m).map(|j| j >= n_correct), lcm);
    let lhs = (a_c - a_kappa).abs() as f64 / denom;
    let lhs_e_aurc = ((a_c - a_opt) - (a_kappa - a_opt)).abs() as f64 / denom;

    let (loss_full, _) = consistency_ranking_loss_full(c, kappa)?;
    let rhs = match q.min_dc {
        Some(d) if d > 0.0 => Some(loss_full / (m as f64 * d)),
        _ => None,
    };
    let holds = rhs.is_none_or(|r| lhs <= r + HOLD_SLACK);
    Ok(BoundCertificate {
        m,
        aurc_kappa: a_kappa as f64 / denom,
        aurc_c: a_c as f64 / denom,
        lhs,
        lhs_e_aurc,
        h_c: q.h_c,
        min_dc: q.min_dc,
        loss_full,
        rhs,
        holds,
        k_stat: q.k_stat,
        f_r: q.f_r,
        vacuous: rhs.is_none(),
    })
}

/// One randomly drawn bound instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInstance {
    pub index: usize,
    pub n_classes: usize,
    pub kappa: Vec<f64>,
    pub consistency: Vec<f64>,
    pub errors: Vec<bool>,
}

/// Draws a small classification instance: random logits give `kappa` and
/// predictions, random labels give errors, and random per-sample prediction
/// streams (each with its own flip rate) give training consistency.
pub fn random_instance(index: usize, max_m: usize, max_classes: usize, seed: u64) -> BoundInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let m = rng.random_range(2..=max_m.max(2));
    let k = rng.random_range(2..=max_classes.max(2));
    loop {
        let logits = ndarray::Array2::from_shape_fn((m, k), |_| rng.random_range(-3.0..3.0));
        let probs = softmax(logits.view());
        let preds: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
        let kappa: Vec<f64> = probs.rows().into_iter().zip(&preds).map(|(r, &p)| r[p]).collect();
        let mut sorted = kappa.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let errors: Vec<bool> = preds.iter().map(|&p| rng.random_range(0..k) != p).collect();
        let epochs = rng.random_range(2..=8);
        let mut log = ConsistencyLog::new(k, vec![None; m]).expect("k >= 2");
        let flip: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let mut current: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        for _ in 0..epochs {
            for (p, &f) in current.iter_mut().zip(&flip) {
                if rng.random::<f64>() < f {
                    *p = rng.random_range(0..k);
                }
            }
            log.record_epoch(&current).expect("valid predictions");
        }
        let consistency = log.consistency().expect("at least two epochs").values;
        return BoundInstance {
            index,
            n_classes: k,
            kappa,
            consistency,
            errors,
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub instance: BoundInstance,
    pub certificate: BoundCertificate,
}

/// Certifies `n` random instances in parallel. Output order and content
/// depend only on the arguments.
pub fn certification_campaign(
    n: usize,
    max_m: usize,
    max_classes: usize,
    seed: u64,
) -> Result<Vec<CampaignRecord>> {
    if !(2..=MAX_ENUMERATION_CAP).contains(&max_m) {
        return Err(Error::Config(format!(
            "instance size cap {max_m} outside [2, {MAX_ENUMERATION_CAP}]"
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let instance = random_instance(i, max_m, max_classes, seed);
            let certificate = certify_bound(
                &instance.kappa,
                &instance.consistency,
                &instance.errors,
                max_m,
            )?;
            Ok(CampaignRecord {
                instance,
                certificate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_descend_with_index_ties() {
        assert_eq!(rank_scores(&[0.9, 0.1, 0.5]).unwrap().ranks(), &[1, 3, 2]);
        assert_eq!(rank_scores(&[0.4; 4]).unwrap().ranks(), &[1, 2, 3, 4]);
        let r = rank_scores(&[0.3, 0.8, 0.1, 0.5]).unwrap();
        assert_eq!(r.order(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn alignment_without_ties_is_unique() {
        let kr = rank_scores(&[0.1, 0.2, 0.3]).unwrap();
        let r = align_consistency_ranking(&kr, &[0.9, 0.5, 0.1], &[true, false, true], 8).unwrap();
        assert_eq!(r.ranks(), &[1, 2, 3]);
    }

    #[test]
    fn alignment_resolves_tie_toward_kappa() {
        // samples 0 (error) and 1 (correct) tie in c; kappa puts the correct one first
        let kr = rank_scores(&[0.2, 0.9, 0.1]).unwrap();
        let r = align_consistency_ranking(&kr, &[0.5, 0.5, 0.1], &[false, true, true], 8).unwrap();
        // enumerate both orders: [0,1,2] puts correct at {2,3}, [1,0,2] at {1,3};
        // kappa has correct at {1,3}, so the second order costs 0
        assert_eq!(r.order(), vec![1, 0, 2]);
    }

    #[test]
    fn alignment_respects_cap() {
        let kr = rank_scores(&[0.1; 9]).unwrap();
        assert!(align_consistency_ranking(&kr, &[0.0; 9], &[true; 9], 8).is_err());
    }

    #[test]
    fn identical_orders_have_no_gap() {
        let c = [0.9, 0.6, 0.3, 0.1];
        let e = [false, true, false, true];
        let q = theorem_quantities(&c, &c, &e, 8).unwrap();
        assert_eq!(q.h_c, 0);
        let cert = certify_bound(&c, &c, &e, 8).unwrap();
        assert_eq!(cert.lhs, 0.0);
        assert!(cert.holds);
    }

    #[test]
    fn boundary_swap_gives_unit_h() {
        // c order: a, b (correct), e (error); kappa swaps b and e
        let c = [0.9, 0.5, 0.1];
        let kappa = [0.9, 0.2, 0.5];
        let errors = [false, false, true];
        let q = theorem_quantities(&kappa, &c, &errors, 8).unwrap();
        assert_eq!(q.h_c, 1);
        assert_eq!(q.f_r, 2);
        assert_eq!(q.k_stat, 0);
    }

    #[test]
    fn four_sample_swap_by_hand() {
        let c = [1.0, 0.75, 0.5, 0.25];
        let kappa = [0.9, 0.8, 0.6, 0.7];
        let errors = [false, false, false, true];
        let cert = certify_bound(&kappa, &c, &errors, 8).unwrap();
        // kappa order errors (F, F, T, F): risks 0, 0, 1/3, 1/4 -> 7/48
        // c order errors (F, F, F, T): risks 0, 0, 0, 1/4 -> 3/48
        assert!((cert.aurc_kappa - 7.0 / 48.0).abs() < 1e-15);
        assert!((cert.aurc_c - 3.0 / 48.0).abs() < 1e-15);
        assert!((cert.lhs - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(cert.h_c, 1);
        assert_eq!(cert.min_dc, Some(0.25));
        // pair terms 0.15 + 0.2 + 0.55 + 0.05 + 0.4 + 0.35
        assert!((cert.loss_full - 1.7).abs() < 1e-12);
        assert!((cert.rhs.unwrap() - 1.7).abs() < 1e-12);
        assert!(cert.holds);
    }

    #[test]
    fn duplicated_kappa_is_rejected() {
        assert!(matches!(
            certify_bound(&[0.5, 0.5], &[0.1, 0.2], &[false, true], 8),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn exact_lcm() {
        assert_eq!(lcm_up_to(8), 840);
        assert_eq!(lcm_up_to(1), 1);
    }
}
