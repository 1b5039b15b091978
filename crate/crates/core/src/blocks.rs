//! Balanced presentation blocks, catch trials, practice items and
//! per-session ordering.
//!
//! A block holds one word side per pair, `2 * instances / B` tokens of that
//! side. Feature balance comes from pairing up the pairs of each feature class
//! with complementary side patterns. Gender balance for odd token counts is an
//! orientation problem: each word side's blocks are coupled two by two, every
//! couple gets one female-heavy and one male-heavy block, and the couples are
//! oriented along Euler circuits of the block multigraph so that no block
//! collects more than one surplus token of either gender.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    validate_test_set, Gender, PairId, Recording, RecordingId, TestSet, Violation, WordList,
    WordSide,
};
use crate::rng::{stream, stream_rng};

/// Catch trials per main block.
pub const DEFAULT_CATCH_TRIALS: usize = 20;
/// Items in the practice run.
pub const DEFAULT_PRACTICE_ITEMS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("block count {blocks} does not divide the {tokens} recordings per pair")]
    NotADivisor { blocks: usize, tokens: usize },
    #[error("unsatisfiable balance: {constraint}")]
    Unsatisfiable { constraint: String },
    #[error("invalid test set: {0}")]
    InvalidTestSet(Violation),
    #[error("recording {0} references a pair missing from the word list")]
    UnknownPair(RecordingId),
    #[error("need {needed} catch trials but only {available} eligible WB recordings")]
    InsufficientCatchMaterial { needed: usize, available: usize },
    #[error("need {needed} {gender} practice items but only {available} are available")]
    InsufficientPractice { needed: usize, available: usize, gender: Gender },
}

/// One trial as presented to a listener.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockItem {
    pub recording_id: RecordingId,
    pub pair_id: PairId,
    /// The pair's words, feature-present first.
    pub choices: [String; 2],
    pub correct_side: WordSide,
    pub is_catch_trial: bool,
    pub talker_gender: Gender,
    pub feature_class: String,
    pub condition: String,
    pub audio: String,
}

impl BlockItem {
    pub fn from_recording(rec: &Recording, list: &WordList, is_catch_trial: bool) -> Result<Self, BlockError> {
        let pair = list.pair(&rec.pair_id).ok_or_else(|| BlockError::UnknownPair(rec.recording_id.clone()))?;
        Ok(BlockItem {
            recording_id: rec.recording_id.clone(),
            pair_id: rec.pair_id.clone(),
            choices: [pair.word_present.clone(), pair.word_absent.clone()],
            correct_side: rec.word_side,
            is_catch_trial,
            talker_gender: rec.talker_gender,
            feature_class: pair.feature_class.clone(),
            condition: rec.condition.clone(),
            audio: rec.audio.clone(),
        })
    }

    pub fn correct_word(&self) -> &str {
        match self.correct_side {
            WordSide::Present => &self.choices[0],
            WordSide::Absent => &self.choices[1],
        }
    }

    /// Side named by `word`, if it is one of the two choices.
    pub fn side_of(&self, word: &str) -> Option<WordSide> {
        let word = word.trim();
        if word == self.choices[0] {
            Some(WordSide::Present)
        } else if word == self.choices[1] {
            Some(WordSide::Absent)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub block_id: u32,
    pub condition: String,
    pub language: String,
    pub items: Vec<BlockItem>,
}

impl BlockPlan {
    pub fn scored_items(&self) -> impl Iterator<Item = &BlockItem> {
        self.items.iter().filter(|i| !i.is_catch_trial)
    }

    pub fn catch_items(&self) -> impl Iterator<Item = &BlockItem> {
        self.items.iter().filter(|i| i.is_catch_trial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PracticeSet {
    pub items: Vec<BlockItem>,
}

/// Partitions `set` into `block_count` balanced blocks.
///
/// `block_count == 1` yields a single block with every recording (both sides
/// of every pair); it exists for debugging only.
pub fn build_blocks(
    set: &TestSet,
    list: &WordList,
    block_count: usize,
    seed: u64,
) -> Result<Vec<BlockPlan>, BlockError> {
    if let Some(v) = validate_test_set(set, Some(list)).into_iter().next() {
        return Err(BlockError::InvalidTestSet(v));
    }
    let instances = set.instances_per_word;
    let per_pair = 2 * instances;
    if block_count == 0 || !per_pair.is_multiple_of(block_count) {
        return Err(BlockError::NotADivisor { blocks: block_count, tokens: per_pair });
    }
    if block_count == 1 {
        let mut items = set
            .recordings
            .iter()
            .map(|r| BlockItem::from_recording(r, list, false))
            .collect::<Result<Vec<_>, _>>()?;
        sort_items(&mut items, list);
        return Ok(vec![BlockPlan {
            block_id: 1,
            condition: set.condition.clone(),
            language: list.language.clone(),
            items,
        }]);
    }
    if !block_count.is_multiple_of(2) {
        return Err(BlockError::Unsatisfiable {
            constraint: format!(
                "each word side must fill exactly B/2 blocks, so B must be even (B = {block_count})"
            ),
        });
    }
    let tokens = per_pair / block_count;
    if tokens % 2 == 1 && !block_count.is_multiple_of(4) {
        return Err(BlockError::Unsatisfiable {
            constraint: format!(
                "{tokens} token(s) per pair per block cannot be gender-balanced unless B is a multiple of 4 (B = {block_count})"
            ),
        });
    }

    let sides = assign_sides(list, block_count, seed);
    let groups = set.by_word();
    let heavy = if tokens % 2 == 1 { Some(orient_gender_surplus(list, &sides, block_count, seed)) } else { None };

    let mut token_rng = stream_rng(seed, stream::BLOCK_TOKENS);
    let mut blocks: Vec<Vec<BlockItem>> = vec![Vec::new(); block_count];
    for pair in list.pairs() {
        let present_blocks = &sides[&pair.pair_id];
        for side in WordSide::BOTH {
            let side_blocks: Vec<usize> = (0..block_count)
                .filter(|b| present_blocks.contains(b) == (side == WordSide::Present))
                .collect();
            let recs = &groups[&(&pair.pair_id, side)];
            let mut female: Vec<&Recording> =
                recs.iter().copied().filter(|r| r.talker_gender == Gender::Female).collect();
            let mut male: Vec<&Recording> =
                recs.iter().copied().filter(|r| r.talker_gender == Gender::Male).collect();
            female.shuffle(&mut token_rng);
            male.shuffle(&mut token_rng);
            let (mut fi, mut mi) = (0, 0);
            for &b in &side_blocks {
                let n_female = match &heavy {
                    None => tokens / 2,
                    Some(h) if h.contains(&(pair.pair_id.clone(), side, b)) => tokens / 2 + 1,
                    Some(_) => tokens / 2,
                };
                let n_male = tokens - n_female;
                for r in female[fi..fi + n_female].iter().chain(&male[mi..mi + n_male]) {
                    blocks[b].push(BlockItem::from_recording(r, list, false)?);
                }
                fi += n_female;
                mi += n_male;
            }
            debug_assert_eq!((fi, mi), (female.len(), male.len()));
        }
    }

    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(b, mut items)| {
            sort_items(&mut items, list);
            BlockPlan {
                block_id: b as u32 + 1,
                condition: set.condition.clone(),
                language: list.language.clone(),
                items,
            }
        })
        .collect())
}

fn sort_items(items: &mut [BlockItem], list: &WordList) {
    items.sort_by(|a, b| {
        (list.position(&a.pair_id), a.correct_side, &a.recording_id)
            .cmp(&(list.position(&b.pair_id), b.correct_side, &b.recording_id))
    });
}

/// For every pair, the set of blocks that receive its feature-present side.
///
/// Within each feature class pairs are shuffled and taken two at a time; the
/// first gets a random half of the blocks, the second the complement, so
/// every block sees present and absent sides of a class within one of each
/// other.
fn assign_sides(list: &WordList, block_count: usize, seed: u64) -> BTreeMap<PairId, BTreeSet<usize>> {
    let mut rng = stream_rng(seed, stream::BLOCK_SIDES);
    let mut out = BTreeMap::new();
    for class in list.feature_classes() {
        let mut pairs: Vec<&PairId> =
            list.pairs().iter().filter(|p| p.feature_class == class).map(|p| &p.pair_id).collect();
        pairs.shuffle(&mut rng);
        for couple in pairs.chunks(2) {
            let mut order: Vec<usize> = (0..block_count).collect();
            order.shuffle(&mut rng);
            let (first, second) = order.split_at(block_count / 2);
            out.insert(couple[0].clone(), first.iter().copied().collect());
            if let Some(p) = couple.get(1) {
                out.insert((*p).clone(), second.iter().copied().collect());
            }
        }
    }
    out
}

/// Chooses which `(pair, side, block)` groups carry the extra female token
/// when the per-block token count is odd.
fn orient_gender_surplus(
    list: &WordList,
    sides: &BTreeMap<PairId, BTreeSet<usize>>,
    block_count: usize,
    seed: u64,
) -> BTreeSet<(PairId, WordSide, usize)> {
    let mut rng = stream_rng(seed, stream::BLOCK_TOKENS ^ 0x100);
    // edge: (pair index, side, u, v); one endpoint becomes female-heavy
    let mut edges: Vec<(usize, WordSide, usize, usize)> = Vec::new();
    for (pi, pair) in list.pairs().iter().enumerate() {
        let present = &sides[&pair.pair_id];
        for side in WordSide::BOTH {
            let mut bs: Vec<usize> =
                (0..block_count).filter(|b| present.contains(b) == (side == WordSide::Present)).collect();
            bs.shuffle(&mut rng);
            for c in bs.chunks(2) {
                edges.push((pi, side, c[0], c[1]));
            }
        }
    }
    let real_edges = edges.len();
    let mut ends: Vec<(usize, usize)> = edges.iter().map(|e| (e.2, e.3)).collect();
    let mut degree = vec![0usize; block_count];
    for &(u, v) in &ends {
        degree[u] += 1;
        degree[v] += 1;
    }
    let odd: Vec<usize> = (0..block_count).filter(|&b| degree[b] % 2 == 1).collect();
    for c in odd.chunks(2) {
        ends.push((c[0], c[1]));
    }
    let tails = euler_orientation(block_count, &ends);

    let mut heavy = BTreeSet::new();
    for (e, &(pi, side, _, _)) in edges.iter().enumerate().take(real_edges) {
        heavy.insert((list.pairs()[pi].pair_id.clone(), side, tails[e]));
    }
    heavy
}

/// Orients every edge of a multigraph with all-even degrees along Euler
/// circuits; returns the tail vertex of each edge. Each vertex ends up with
/// equal in- and out-degree.
fn euler_orientation(vertices: usize, ends: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); vertices];
    for (e, &(u, v)) in ends.iter().enumerate() {
        adj[u].push(e);
        adj[v].push(e);
    }
    let mut used = vec![false; ends.len()];
    let mut tail = vec![usize::MAX; ends.len()];
    let mut next = vec![0usize; vertices];
    for start in 0..vertices {
        let mut stack = vec![start];
        while let Some(&v) = stack.last() {
            while next[v] < adj[v].len() && used[adj[v][next[v]]] {
                next[v] += 1;
            }
            if let Some(&e) = adj[v].get(next[v]) {
                used[e] = true;
                tail[e] = v;
                let (a, b) = ends[e];
                stack.push(if a == v { b } else { a });
            } else {
                stack.pop();
            }
        }
    }
    tail
}

/// Which catch-trial material is acceptable for a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatchPolicy {
    /// Only WB recordings of pairs that do not occur in the block.
    DisjointPairsOnly,
    /// Unscheduled pairs first; then other talkers' WB recordings of the
    /// word side the block already schedules for a pair. A listener never
    /// hears both words of a pair and never hears a scored token twice.
    #[default]
    DisjointThenSameSide,
}

/// Appends `n` catch trials drawn from the WB pool, each from a distinct pair.
pub fn inject_catch_trials(
    block: &BlockPlan,
    wb_pool: &TestSet,
    list: &WordList,
    n: usize,
    policy: CatchPolicy,
    seed: u64,
) -> Result<BlockPlan, BlockError> {
    if n == 0 {
        return Ok(block.clone());
    }
    let mut rng = stream_rng(seed ^ u64::from(block.block_id).wrapping_mul(0x9E37_79B9), stream::CATCH);
    let scheduled: BTreeMap<&PairId, WordSide> =
        block.scored_items().map(|i| (&i.pair_id, i.correct_side)).collect();
    let used_ids: BTreeSet<&RecordingId> = block.items.iter().map(|i| &i.recording_id).collect();

    let mut by_pair: BTreeMap<&PairId, Vec<&Recording>> = BTreeMap::new();
    for r in &wb_pool.recordings {
        by_pair.entry(&r.pair_id).or_default().push(r);
    }
    let mut unscheduled: Vec<&PairId> = by_pair.keys().copied().filter(|p| !scheduled.contains_key(p)).collect();
    unscheduled.shuffle(&mut rng);
    let mut chosen: Vec<&Recording> = Vec::new();
    for p in unscheduled {
        if chosen.len() == n {
            break;
        }
        let recs = &by_pair[p];
        chosen.push(recs[rng.random_range(0..recs.len())]);
    }
    if chosen.len() < n && policy == CatchPolicy::DisjointThenSameSide {
        let mut same_side: Vec<(&PairId, Vec<&Recording>)> = by_pair
            .iter()
            .filter_map(|(p, recs)| {
                let side = *scheduled.get(p)?;
                let ok: Vec<&Recording> = recs
                    .iter()
                    .copied()
                    .filter(|r| r.word_side == side && !used_ids.contains(&r.recording_id))
                    .collect();
                (!ok.is_empty()).then_some((*p, ok))
            })
            .collect();
        same_side.shuffle(&mut rng);
        for (_, recs) in same_side {
            if chosen.len() == n {
                break;
            }
            chosen.push(recs[rng.random_range(0..recs.len())]);
        }
    }
    if chosen.len() < n {
        return Err(BlockError::InsufficientCatchMaterial { needed: n, available: chosen.len() });
    }
    let mut out = block.clone();
    for r in chosen {
        out.items.push(BlockItem::from_recording(r, list, true)?);
    }
    Ok(out)
}

/// Draws `n` practice items from the WB set, split evenly by talker gender
/// (the odd item's gender is seeded) and spread over distinct pairs when
/// possible.
pub fn select_practice(wb_set: &TestSet, list: &WordList, n: usize, seed: u64) -> Result<PracticeSet, BlockError> {
    let mut rng = stream_rng(seed, stream::PRACTICE);
    let extra_female = n % 2 == 1 && rng.random_bool(0.5);
    let quota = |g: Gender| n / 2 + usize::from(n % 2 == 1 && (g == Gender::Female) == extra_female);

    let mut used_pairs: BTreeSet<&PairId> = BTreeSet::new();
    let mut picked: Vec<&Recording> = Vec::new();
    for gender in [Gender::Female, Gender::Male] {
        let want = quota(gender);
        let mut pool: Vec<&Recording> = wb_set.recordings.iter().filter(|r| r.talker_gender == gender).collect();
        if pool.len() < want {
            return Err(BlockError::InsufficientPractice { needed: want, available: pool.len(), gender });
        }
        pool.shuffle(&mut rng);
        // one item per pair where possible, then fill from pairs already used
        let (fresh, repeat): (Vec<&Recording>, Vec<&Recording>) =
            pool.into_iter().partition(|r| !used_pairs.contains(&r.pair_id));
        let mut taken = 0;
        let mut leftovers = Vec::new();
        for r in fresh {
            if taken < want && used_pairs.insert(&r.pair_id) {
                picked.push(r);
                taken += 1;
            } else {
                leftovers.push(r);
            }
        }
        for r in leftovers.into_iter().chain(repeat) {
            if taken == want {
                break;
            }
            picked.push(r);
            taken += 1;
        }
        if taken < want {
            return Err(BlockError::InsufficientPractice { needed: want, available: taken, gender });
        }
    }
    picked.shuffle(&mut rng);
    let items = picked
        .into_iter()
        .map(|r| BlockItem::from_recording(r, list, false))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PracticeSet { items })
}

/// Seeded presentation order for one session. Catch trials are interleaved
/// so that no more than two appear back to back (more only if the block has
/// too few scored items to separate them).
pub fn shuffle_for_session(block: &BlockPlan, session_seed: u64) -> Vec<BlockItem> {
    let mut rng = stream_rng(session_seed, stream::SESSION_ORDER);
    let mut regular: Vec<&BlockItem> = block.scored_items().collect();
    let mut catches: Vec<&BlockItem> = block.catch_items().collect();
    regular.shuffle(&mut rng);
    catches.shuffle(&mut rng);

    let gaps = regular.len() + 1;
    let cap = 2usize.max(catches.len().div_ceil(gaps));
    let mut slots: Vec<usize> = (0..gaps).flat_map(|g| core::iter::repeat_n(g, cap)).collect();
    slots.shuffle(&mut rng);
    let mut per_gap = vec![0usize; gaps];
    for &g in slots.iter().take(catches.len()) {
        per_gap[g] += 1;
    }

    let mut out = Vec::with_capacity(block.items.len());
    let mut c = catches.into_iter();
    for (g, &k) in per_gap.iter().enumerate() {
        out.extend(c.by_ref().take(k).cloned());
        if let Some(item) = regular.get(g) {
            out.push((*item).clone());
        }
    }
    out
}

/// A broken block-plan invariant, as found by [`check_plans`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanViolation {
    Coverage { recording_id: RecordingId, occurrences: usize },
    BothSides { block_id: u32, pair_id: PairId },
    GenderImbalance { block_id: u32, female: usize, male: usize },
    FeatureImbalance { block_id: u32, feature_class: String, present: usize, absent: usize },
    SideSpread { pair_id: PairId, side: WordSide, blocks: usize, expected: usize },
}

/// Checks block plans (catch trials ignored) against the test set they were
/// built from.
pub fn check_plans(plans: &[BlockPlan], set: &TestSet) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<&RecordingId, usize> = set.recordings.iter().map(|r| (&r.recording_id, 0)).collect();
    let mut spread: BTreeMap<(&PairId, WordSide), usize> = BTreeMap::new();
    for plan in plans {
        let mut sides: BTreeMap<&PairId, BTreeSet<WordSide>> = BTreeMap::new();
        let mut female = 0usize;
        let mut male = 0usize;
        for item in plan.scored_items() {
            *seen.entry(&item.recording_id).or_insert(0) += 1;
            sides.entry(&item.pair_id).or_default().insert(item.correct_side);
            match item.talker_gender {
                Gender::Female => female += 1,
                Gender::Male => male += 1,
            }
        }
        if plans.len() > 1 {
            for (pair_id, s) in &sides {
                if s.len() > 1 {
                    out.push(PlanViolation::BothSides { block_id: plan.block_id, pair_id: (*pair_id).clone() });
                }
                for side in s {
                    *spread.entry((pair_id, *side)).or_default() += 1;
                }
            }
            let class_of: BTreeMap<&PairId, &str> =
                plan.scored_items().map(|i| (&i.pair_id, i.feature_class.as_str())).collect();
            let mut class_sides: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for (pair_id, s) in &sides {
                let e = class_sides.entry(class_of[pair_id]).or_default();
                if s.contains(&WordSide::Present) {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
            for (class, (p, a)) in class_sides {
                if p.abs_diff(a) > 1 {
                    out.push(PlanViolation::FeatureImbalance {
                        block_id: plan.block_id,
                        feature_class: class.into(),
                        present: p,
                        absent: a,
                    });
                }
            }
        }
        if female.abs_diff(male) > 1 {
            out.push(PlanViolation::GenderImbalance { block_id: plan.block_id, female, male });
        }
    }
    for (recording_id, occurrences) in seen {
        if occurrences != 1 {
            out.push(PlanViolation::Coverage { recording_id: recording_id.clone(), occurrences });
        }
    }
    if plans.len() > 1 {
        let expected = plans.len() / 2;
        for ((pair_id, side), blocks) in spread {
            if blocks != expected {
                out.push(PlanViolation::SideSpread { pair_id: pair_id.clone(), side, blocks, expected });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{test_set, word_list};

    fn english_like() -> (WordList, TestSet) {
        let list = word_list(96, &["voicing", "nasality", "sustention", "sibilation", "graveness", "compactness"]);
        let set = test_set(&list, "WB", 6);
        (list, set)
    }

    #[test]
    fn twelve_blocks_of_96() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        assert_eq!(plans.len(), 12);
        assert!(plans.iter().all(|p| p.items.len() == 96));
        assert_eq!(check_plans(&plans, &set), vec![]);
    }

    #[test]
    fn six_blocks_hold_one_female_and_one_male_token_per_pair() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 6, 2).unwrap();
        for plan in &plans {
            let mut per_pair: BTreeMap<&PairId, (usize, usize)> = BTreeMap::new();
            for item in &plan.items {
                let e = per_pair.entry(&item.pair_id).or_default();
                match item.talker_gender {
                    Gender::Female => e.0 += 1,
                    Gender::Male => e.1 += 1,
                }
            }
            assert_eq!(per_pair.len(), 96);
            assert!(per_pair.values().all(|&c| c == (1, 1)));
        }
        assert_eq!(check_plans(&plans, &set), vec![]);
    }

    #[test]
    fn all_feasible_block_counts_are_balanced() {
        let list = word_list(13, &["voicing", "nasality", "tone"]);
        let set = test_set(&list, "WB", 6);
        for b in [2, 4, 6, 12] {
            for seed in 0..5 {
                let plans = build_blocks(&set, &list, b, seed).unwrap();
                assert_eq!(check_plans(&plans, &set), vec![], "B={b} seed={seed}");
            }
        }
    }

    #[test]
    fn single_block_is_the_whole_set() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 1, 0).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].items.len(), set.recordings.len());
    }

    #[test]
    fn infeasible_counts_are_rejected() {
        let (list, set) = english_like();
        assert!(matches!(build_blocks(&set, &list, 5, 0), Err(BlockError::NotADivisor { .. })));
        assert!(matches!(build_blocks(&set, &list, 0, 0), Err(BlockError::NotADivisor { .. })));
        assert!(matches!(build_blocks(&set, &list, 3, 0), Err(BlockError::Unsatisfiable { .. })));
    }

    #[test]
    fn invalid_sets_are_rejected() {
        let (list, mut set) = english_like();
        set.recordings.pop();
        assert!(matches!(build_blocks(&set, &list, 12, 0), Err(BlockError::InvalidTestSet(_))));
    }

    #[test]
    fn plans_are_seed_deterministic() {
        let (list, set) = english_like();
        let a = build_blocks(&set, &list, 12, 9).unwrap();
        let b = build_blocks(&set, &list, 12, 9).unwrap();
        let c = build_blocks(&set, &list, 12, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn catch_trials_extend_a_full_block_to_116() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        let block = inject_catch_trials(&plans[0], &set, &list, 20, CatchPolicy::default(), 4).unwrap();
        assert_eq!(block.items.len(), 116);
        assert_eq!(block.catch_items().count(), 20);
        let pairs: BTreeSet<_> = block.catch_items().map(|i| &i.pair_id).collect();
        assert_eq!(pairs.len(), 20);
        let ids: BTreeSet<_> = block.items.iter().map(|i| &i.recording_id).collect();
        assert_eq!(ids.len(), 116);
        for c in block.catch_items() {
            let scheduled = plans[0].items.iter().find(|i| i.pair_id == c.pair_id).unwrap();
            assert_eq!(scheduled.correct_side, c.correct_side);
        }
    }

    #[test]
    fn zero_catch_trials_leave_block_unchanged() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        let block = inject_catch_trials(&plans[3], &set, &list, 0, CatchPolicy::DisjointPairsOnly, 4).unwrap();
        assert_eq!(block, plans[3]);
    }

    #[test]
    fn catch_shortfall_is_reported() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        let err = inject_catch_trials(&plans[0], &set, &list, 20, CatchPolicy::DisjointPairsOnly, 4).unwrap_err();
        assert_eq!(err, BlockError::InsufficientCatchMaterial { needed: 20, available: 0 });
    }

    #[test]
    fn catch_prefers_unscheduled_pairs() {
        let (list, set) = english_like();
        let small = word_list(10, &["voicing"]);
        let small_set = test_set(&small, "WB", 6);
        let plans = build_blocks(&small_set, &small, 2, 1).unwrap();
        // pool covers 96 pairs; the block only schedules the first 10
        let block = inject_catch_trials(&plans[0], &set, &list, 20, CatchPolicy::DisjointPairsOnly, 1).unwrap();
        assert!(block.catch_items().all(|c| small.pair(&c.pair_id).is_none()));
    }

    #[test]
    fn practice_is_gender_balanced() {
        let (list, set) = english_like();
        let p = select_practice(&set, &list, 16, 3).unwrap();
        assert_eq!(p.items.len(), 16);
        assert_eq!(p.items.iter().filter(|i| i.talker_gender == Gender::Female).count(), 8);
        let pairs: BTreeSet<_> = p.items.iter().map(|i| &i.pair_id).collect();
        assert_eq!(pairs.len(), 16);
        let two = select_practice(&set, &list, 2, 3).unwrap();
        assert_eq!(two.items.iter().filter(|i| i.talker_gender == Gender::Female).count(), 1);
        assert!(matches!(
            select_practice(&set, &list, set.recordings.len() + 2, 3),
            Err(BlockError::InsufficientPractice { .. })
        ));
        assert_eq!(select_practice(&set, &list, 16, 3).unwrap(), p);
    }

    #[test]
    fn session_order_is_a_seeded_permutation() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        let block = inject_catch_trials(&plans[0], &set, &list, 20, CatchPolicy::default(), 4).unwrap();
        let a = shuffle_for_session(&block, 1);
        assert_eq!(a, shuffle_for_session(&block, 1));
        assert_ne!(a, shuffle_for_session(&block, 2));
        let mut x: Vec<_> = a.iter().map(|i| &i.recording_id).collect();
        let mut y: Vec<_> = block.items.iter().map(|i| &i.recording_id).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn catch_runs_never_exceed_two() {
        let (list, set) = english_like();
        let plans = build_blocks(&set, &list, 12, 1).unwrap();
        let block = inject_catch_trials(&plans[0], &set, &list, 20, CatchPolicy::default(), 4).unwrap();
        for seed in 0..1000 {
            let order = shuffle_for_session(&block, seed);
            let mut run = 0;
            for item in &order {
                run = if item.is_catch_trial { run + 1 } else { 0 };
                assert!(run <= 2, "seed {seed}");
            }
        }
    }

    #[test]
    fn euler_orientation_balances_degrees() {
        let ends = [(0, 1), (1, 2), (2, 0), (0, 1), (1, 0), (2, 2)];
        let tails = euler_orientation(3, &ends);
        let mut balance = [0i32; 3];
        for (e, &(u, v)) in ends.iter().enumerate() {
            let head = if tails[e] == u { v } else { u };
            balance[tails[e]] += 1;
            balance[head] -= 1;
        }
        assert_eq!(balance, [0, 0, 0]);
    }
}
