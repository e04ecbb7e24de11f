//! Pairwise ID accuracies, gender accuracy, ID histograms, BLEU@4 and the
//! permutation-max caption score.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Gender;
use crate::error::{FitbError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTally {
    pub same_correct: usize,
    pub same_total: usize,
    pub diff_correct: usize,
    pub diff_total: usize,
}

impl PairTally {
    pub fn pairs(&self) -> usize {
        self.same_total + self.diff_total
    }

    pub fn inst(&self) -> Option<f64> {
        (self.pairs() > 0).then(|| 100.0 * (self.same_correct + self.diff_correct) as f64 / self.pairs() as f64)
    }

    pub fn same(&self) -> Option<f64> {
        (self.same_total > 0).then(|| 100.0 * self.same_correct as f64 / self.same_total as f64)
    }

    pub fn diff(&self) -> Option<f64> {
        (self.diff_total > 0).then(|| 100.0 * self.diff_correct as f64 / self.diff_total as f64)
    }
}

/// Tallies agreement on every unordered pair of blanks.
pub fn pairwise_accuracy<A: PartialEq, B: PartialEq>(gt: &[A], pred: &[B]) -> Result<PairTally> {
    if gt.len() != pred.len() {
        return Err(FitbError::Data(format!("pairwise_accuracy: {} ground-truth ids vs {} predictions", gt.len(), pred.len())));
    }
    let mut t = PairTally::default();
    for i in 0..gt.len() {
        for j in i + 1..gt.len() {
            let pred_same = pred[i] == pred[j];
            if gt[i] == gt[j] {
                t.same_total += 1;
                t.same_correct += pred_same as usize;
            } else {
                t.diff_total += 1;
                t.diff_correct += !pred_same as usize;
            }
        }
    }
    Ok(t)
}

pub fn class_acc(same: f64, diff: f64) -> f64 {
    if same + diff <= 0.0 {
        0.0
    } else {
        2.0 * same * diff / (same + diff)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Average per-set accuracies.
    #[default]
    Macro,
    /// Pool pair counts over all sets.
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub same_acc: f64,
    pub diff_acc: f64,
    pub class_acc: f64,
    pub inst_acc: f64,
    pub gender_acc: Option<f64>,
    pub n_sets: usize,
    pub n_pairs_same: usize,
    pub n_pairs_diff: usize,
    pub id_histogram: Vec<usize>,
    pub aggregation: Aggregation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_set: Option<Vec<PairTally>>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Combines per-set tallies. Sets without pairs are skipped.
pub fn aggregate(tallies: &[PairTally], mode: Aggregation) -> Result<AccuracyReport> {
    let scorable: Vec<&PairTally> = tallies.iter().filter(|t| t.pairs() > 0).collect();
    if scorable.is_empty() {
        return Err(FitbError::Empty("no set has two or more blanks"));
    }
    let n_pairs_same = scorable.iter().map(|t| t.same_total).sum();
    let n_pairs_diff = scorable.iter().map(|t| t.diff_total).sum();
    let (same_acc, diff_acc, inst_acc) = match mode {
        Aggregation::Macro => (
            mean(scorable.iter().filter_map(|t| t.same())),
            mean(scorable.iter().filter_map(|t| t.diff())),
            mean(scorable.iter().filter_map(|t| t.inst())),
        ),
        Aggregation::Micro => {
            let pooled = scorable.iter().fold(PairTally::default(), |a, t| PairTally {
                same_correct: a.same_correct + t.same_correct,
                same_total: a.same_total + t.same_total,
                diff_correct: a.diff_correct + t.diff_correct,
                diff_total: a.diff_total + t.diff_total,
            });
            (pooled.same().unwrap_or(0.0), pooled.diff().unwrap_or(0.0), pooled.inst().unwrap_or(0.0))
        }
    };
    Ok(AccuracyReport {
        same_acc,
        diff_acc,
        class_acc: class_acc(same_acc, diff_acc),
        inst_acc,
        gender_acc: None,
        n_sets: scorable.len(),
        n_pairs_same,
        n_pairs_diff,
        id_histogram: Vec::new(),
        aggregation: mode,
        per_set: None,
    })
}

/// Scores predicted ID sequences against ground truth, one pair per set.
pub fn evaluate_ids(gt: &[Vec<u32>], pred: &[Vec<u32>], mode: Aggregation) -> Result<AccuracyReport> {
    if gt.len() != pred.len() {
        return Err(FitbError::Data(format!("{} ground-truth sets vs {} predicted", gt.len(), pred.len())));
    }
    let tallies = gt.iter().zip(pred).map(|(g, p)| pairwise_accuracy(g, p)).collect::<Result<Vec<_>>>()?;
    let mut report = aggregate(&tallies, mode)?;
    report.id_histogram = id_histogram(pred);
    report.per_set = Some(tallies);
    Ok(report)
}

pub fn gender_accuracy(gt: &[Gender], pred: &[Gender]) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(FitbError::Data(format!("gender_accuracy: {} labels vs {} predictions", gt.len(), pred.len())));
    }
    if gt.is_empty() {
        return Err(FitbError::Empty("no gender labels"));
    }
    Ok(100.0 * gt.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / gt.len() as f64)
}

/// Count of blanks per ID rank; index 0 holds ID 1.
pub fn id_histogram(seqs: &[Vec<u32>]) -> Vec<usize> {
    let mut h: Vec<usize> = Vec::new();
    for &id in seqs.iter().flatten() {
        let k = id.max(1) as usize - 1;
        if h.len() <= k {
            h.resize(k + 1, 0);
        }
        h[k] += 1;
    }
    h
}

/// Histogram as percentages, ready for plotting.
pub fn histogram_table(h: &[usize]) -> String {
    let total = h.iter().sum::<usize>().max(1) as f64;
    let mut out = String::from("id\tcount\tpercent\n");
    for (i, &c) in h.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{:.2}\n", i + 1, c, 100.0 * c as f64 / total));
    }
    out
}

/// Table row in Same/Diff/Class/Inst/Gen order.
pub fn report_table(rows: &[(String, &AccuracyReport)]) -> String {
    let mut out = format!("{:<28}{:>8}{:>8}{:>8}{:>8}{:>8}\n", "method", "Same", "Diff", "Class", "Inst", "Gen");
    for (name, r) in rows {
        let gen = r.gender_acc.map_or("-".to_string(), |g| format!("{g:.1}"));
        out.push_str(&format!("{:<28}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8}\n", name, r.same_acc, r.diff_acc, r.class_acc, r.inst_acc, gen));
    }
    out
}

pub const BLEU_EPS: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram totals for n = 1..4, plus
/// candidate and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(candidate: &[String], reference: &[String]) -> Self {
        let mut s = BleuStats { cand_len: candidate.len(), ref_len: reference.len(), ..Default::default() };
        for n in 1..=4 {
            let c = ngram_counts(candidate, n);
            let r = ngram_counts(reference, n);
            s.totals[n - 1] = candidate.len().saturating_sub(n - 1);
            s.matches[n - 1] = c.iter().map(|(g, &k)| k.min(*r.get(g).unwrap_or(&0))).sum();
        }
        s
    }

    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            log::warn!("empty candidate scores 0 BLEU");
            return 0.0;
        }
        let log_p: f64 = (0..4)
            .map(|n| {
                let m = if self.matches[n] == 0 { BLEU_EPS } else { self.matches[n] as f64 };
                (m / self.totals[n].max(1) as f64).ln()
            })
            .sum::<f64>()
            / 4.0;
        let bp = if self.cand_len < self.ref_len { (1.0 - self.ref_len as f64 / self.cand_len as f64).exp() } else { 1.0 };
        bp * log_p.exp()
    }
}

pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    BleuStats::of(candidate, reference).score()
}

/// Lowercased whitespace tokens with `, . ; : ! ?` split off as their own
/// tokens, so `[P2],` yields an ID token.
pub fn tokenize_caption(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in s.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ",.;:!?".contains(ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Parses `[p<k>]` (case-insensitive) into `k`.
pub fn parse_id_token(tok: &str) -> Option<u32> {
    let t = tok.to_ascii_lowercase();
    t.strip_prefix("[p")?.strip_suffix(']')?.parse().ok()
}

fn ids_in(sentences: &[Vec<String>]) -> BTreeSet<u32> {
    sentences.iter().flatten().filter_map(|t| parse_id_token(t)).collect()
}

fn relabel(sentences: &[Vec<String>], map: &HashMap<u32, u32>) -> Vec<Vec<String>> {
    sentences
        .iter()
        .map(|s| {
            s.iter()
                .map(|t| match parse_id_token(t).and_then(|k| map.get(&k)) {
                    Some(k) => format!("[p{k}]"),
                    None => t.clone(),
                })
                .collect()
        })
        .collect()
}

/// Corpus-style BLEU over aligned sentence lists (counts summed, then scored).
pub fn set_bleu(pred: &[Vec<String>], reference: &[Vec<String>]) -> f64 {
    let mut total = BleuStats::default();
    for (c, r) in pred.iter().zip(reference) {
        total.add(&BleuStats::of(c, r));
    }
    total.score()
}

pub const EXACT_PERMUTATION_LIMIT: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationScore {
    pub score: f64,
    /// Reference ID → label it was mapped to.
    pub mapping: Vec<(u32, u32)>,
    /// True when the mapping came from the greedy fallback.
    pub approximate: bool,
}

/// Highest set-level BLEU@4 over relabelings of the reference IDs.
///
/// Each reference ID goes either to a distinct predicted label or to a fresh
/// label the prediction never uses; fresh labels are interchangeable, so this
/// covers every way of matching reference characters to predicted ones and
/// the result does not depend on how the prediction names its IDs. With more
/// than [`EXACT_PERMUTATION_LIMIT`] reference IDs the mapping is chosen
/// greedily by ID-token co-occurrence per sentence.
pub fn permutation_max_score(pred: &[Vec<String>], reference: &[Vec<String>]) -> PermutationScore {
    let ref_ids: Vec<u32> = ids_in(reference).into_iter().collect();
    let pred_ids: Vec<u32> = ids_in(pred).into_iter().collect();
    let score_of = |mapping: &[(u32, u32)]| set_bleu(pred, &relabel(reference, &mapping.iter().copied().collect()));

    if ref_ids.len() > EXACT_PERMUTATION_LIMIT {
        let mapping = greedy_mapping(pred, reference, &ref_ids, &pred_ids);
        return PermutationScore { score: score_of(&mapping), mapping, approximate: true };
    }

    let identity: Vec<(u32, u32)> = ref_ids.iter().map(|&k| (k, k)).collect();
    let mut best = PermutationScore { score: score_of(&identity), mapping: identity, approximate: false };
    let fresh = pred_ids.iter().chain(&ref_ids).copied().max().unwrap_or(0) + 1;
    let mut used = vec![false; pred_ids.len()];
    let mut current = Vec::with_capacity(ref_ids.len());
    search(&ref_ids, &pred_ids, fresh, &mut used, &mut current, &mut |m| {
        let s = score_of(m);
        if s > best.score {
            best = PermutationScore { score: s, mapping: m.to_vec(), approximate: false };
        }
    });
    best
}

fn search(ref_ids: &[u32], labels: &[u32], fresh: u32, used: &mut [bool], current: &mut Vec<(u32, u32)>, visit: &mut dyn FnMut(&[(u32, u32)])) {
    let k = current.len();
    if k == ref_ids.len() {
        visit(current);
        return;
    }
    for i in 0..labels.len() {
        if !used[i] {
            used[i] = true;
            current.push((ref_ids[k], labels[i]));
            search(ref_ids, labels, fresh, used, current, visit);
            current.pop();
            used[i] = false;
        }
    }
    current.push((ref_ids[k], fresh + k as u32));
    search(ref_ids, labels, fresh, used, current, visit);
    current.pop();
}

fn greedy_mapping(pred: &[Vec<String>], reference: &[Vec<String>], ref_ids: &[u32], labels: &[u32]) -> Vec<(u32, u32)> {
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (p, r) in pred.iter().zip(reference) {
        let pi: Vec<u32> = p.iter().filter_map(|t| parse_id_token(t)).collect();
        let ri: Vec<u32> = r.iter().filter_map(|t| parse_id_token(t)).collect();
        for &a in &ri {
            for &b in &pi {
                *overlap.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    let mut pairs: Vec<((u32, u32), usize)> = overlap.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mapping: HashMap<u32, u32> = HashMap::new();
    let mut taken: BTreeSet<u32> = BTreeSet::new();
    for ((a, b), _) in pairs {
        if !mapping.contains_key(&a) && !taken.contains(&b) {
            mapping.insert(a, b);
            taken.insert(b);
        }
    }
    for &a in ref_ids {
        if !mapping.contains_key(&a) {
            let b = labels.iter().copied().chain(labels.last().copied().unwrap_or(0) + 1..).find(|b| !taken.contains(b)).expect("unbounded");
            mapping.insert(a, b);
            taken.insert(b);
        }
    }
    ref_ids.iter().map(|a| (*a, mapping[a])).collect()
}
