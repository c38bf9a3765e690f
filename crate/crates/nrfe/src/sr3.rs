//! Self-reinforced reasoning rectification: iterate prompt/parse cycles
//! until the generated reasoning satisfies the polarity and confidence
//! constraints, or the iteration budget runs out.

use std::path::Path;
use std::sync::Mutex;

use crate::dataio::{
    append_store, read_store, BinaryLabel, NewsItem, ReasoningKind, ReasoningStoreEntry,
};
use crate::error::Error;
use crate::gateway::{
    render_initial_prompt, render_rectify_prompt, AlterationState, CredibilityScore, Gateway,
    ReasoningType,
};

#[derive(Debug, Clone)]
pub struct Sr3Config {
    /// Polarity threshold M.
    pub polarity_threshold_m: CredibilityScore,
    /// Confidence increment I.
    pub confidence_increment_i: i64,
    pub max_iter: u32,
    /// Verbatim loop predicate for the positive branch: continue while BOTH
    /// conditions are violated. `false` continues while EITHER is violated,
    /// which enforces both qualification conditions.
    pub strict_conjunction: bool,
    pub workers: usize,
}

impl Default for Sr3Config {
    fn default() -> Self {
        Sr3Config {
            polarity_threshold_m: CredibilityScore::new(50).unwrap(),
            confidence_increment_i: 0,
            max_iter: 5,
            strict_conjunction: true,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalReason {
    Qualified,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct Sr3Outcome {
    pub record: ReasoningStoreEntry,
    pub terminal_reason: TerminalReason,
}

/// Gateway failure wrapped with whatever scores were already collected.
#[derive(Debug)]
pub struct Sr3Error {
    pub news_id: String,
    pub kind: ReasoningKind,
    pub partial_trace: Vec<u8>,
    pub source: Error,
}

impl std::fmt::Display for Sr3Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rectification of ({}, {}) failed after trace {:?}: {}",
            self.news_id,
            self.kind.as_str(),
            self.partial_trace,
            self.source
        )
    }
}

impl std::error::Error for Sr3Error {}

/// Alteration state per Algorithm 1 lines 3 and 13.
pub fn select_alteration(y: BinaryLabel, t: ReasoningType) -> AlterationState {
    match (y, t) {
        (BinaryLabel::Fake, ReasoningType::Positive) => AlterationState::Decrease,
        (BinaryLabel::Real, ReasoningType::Positive) => AlterationState::Increase,
        (BinaryLabel::Fake, ReasoningType::Negative) => AlterationState::Increase,
        (BinaryLabel::Real, ReasoningType::Negative) => AlterationState::Decrease,
    }
}

/// Loop-continuation predicate, Algorithm 1 lines 4 and 14.
pub fn needs_rectify(
    y: BinaryLabel,
    t: ReasoningType,
    v: CredibilityScore,
    v_initial: CredibilityScore,
    cfg: &Sr3Config,
) -> bool {
    let v = v.value() as i64;
    let vi = v_initial.value() as i64;
    let m = cfg.polarity_threshold_m.value() as i64;
    let i = cfg.confidence_increment_i;
    match (y, t) {
        (BinaryLabel::Fake, ReasoningType::Positive) => {
            let polarity_bad = v > m;
            let confidence_bad = v - vi > i;
            if cfg.strict_conjunction {
                polarity_bad && confidence_bad
            } else {
                polarity_bad || confidence_bad
            }
        }
        (BinaryLabel::Real, ReasoningType::Positive) => {
            let polarity_bad = v < m;
            let confidence_bad = v - vi < i;
            if cfg.strict_conjunction {
                polarity_bad && confidence_bad
            } else {
                polarity_bad || confidence_bad
            }
        }
        (BinaryLabel::Fake, ReasoningType::Negative) => v - vi < i,
        (BinaryLabel::Real, ReasoningType::Negative) => v - vi > i,
    }
}

fn kind_of(t: ReasoningType) -> ReasoningKind {
    match t {
        ReasoningType::Positive => ReasoningKind::Positive,
        ReasoningType::Negative => ReasoningKind::Negative,
    }
}

/// Run the rectification loop for one item and reasoning type, with a
/// pre-rated V_initial.
pub fn rectify_one_with_initial(
    item: &NewsItem,
    t: ReasoningType,
    v_initial: CredibilityScore,
    gateway: &Gateway,
    cfg: &Sr3Config,
) -> Result<Sr3Outcome, Sr3Error> {
    let kind = kind_of(t);
    let fail = |trace: &[u8], source: Error| Sr3Error {
        news_id: item.id.clone(),
        kind,
        partial_trace: trace.to_vec(),
        source,
    };

    let s = select_alteration(item.label, t);
    let request = render_initial_prompt(&item.text, item.label, t, v_initial, s);
    let mut current = gateway
        .request_reasoning(&request)
        .map_err(|e| fail(&[], e))?;
    let mut trace = vec![current.score.value()];
    let mut iterations = 0u32;

    while needs_rectify(item.label, t, current.score, v_initial, cfg)
        && iterations < cfg.max_iter
    {
        let request = render_rectify_prompt(
            &item.text,
            item.label,
            t,
            v_initial,
            s,
            &current.reasoning_text,
            current.score,
        );
        current = gateway
            .request_reasoning(&request)
            .map_err(|e| fail(&trace, e))?;
        trace.push(current.score.value());
        iterations += 1;
    }

    let qualified = !needs_rectify(item.label, t, current.score, v_initial, cfg);
    Ok(Sr3Outcome {
        record: ReasoningStoreEntry {
            news_id: item.id.clone(),
            kind,
            reasoning_text: current.reasoning_text,
            score: current.score.value(),
            qualified,
            iterations_used: iterations,
            score_trace: trace,
        },
        terminal_reason: if qualified {
            TerminalReason::Qualified
        } else {
            TerminalReason::BudgetExhausted
        },
    })
}

/// Rate V_initial, then rectify. One rating call plus at most
/// `1 + max_iter` reasoning calls.
pub fn rectify_one(
    item: &NewsItem,
    t: ReasoningType,
    gateway: &Gateway,
    cfg: &Sr3Config,
) -> Result<Sr3Outcome, Sr3Error> {
    let v_initial = gateway
        .rate_initial_credibility(&item.text)
        .map_err(|e| Sr3Error {
            news_id: item.id.clone(),
            kind: kind_of(t),
            partial_trace: Vec::new(),
            source: e,
        })?;
    rectify_one_with_initial(item, t, v_initial, gateway, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusSummary {
    pub qualified: usize,
    pub exhausted: usize,
    pub errored: usize,
}

/// Rectify both reasoning types for every item, appending to the store.
/// Items already present as (id, kind) are skipped, so interrupted runs
/// resume. V_initial is rated once per item and shared by both types.
pub fn rectify_corpus(
    items: &[NewsItem],
    gateway: &Gateway,
    cfg: &Sr3Config,
    store_path: &Path,
) -> Result<CorpusSummary, Error> {
    let existing: std::collections::HashSet<(String, ReasoningKind)> = if store_path.exists() {
        read_store(store_path)?
            .into_iter()
            .map(|e| (e.news_id, e.kind))
            .collect()
    } else {
        Default::default()
    };

    let store = Mutex::new(());
    let summary = Mutex::new(CorpusSummary::default());
    let io_error: Mutex<Option<Error>> = Mutex::new(None);

    let process_item = |item: &NewsItem| {
        let kinds: Vec<ReasoningType> = [ReasoningType::Positive, ReasoningType::Negative]
            .into_iter()
            .filter(|t| !existing.contains(&(item.id.clone(), kind_of(*t))))
            .collect();
        if kinds.is_empty() {
            return;
        }
        let v_initial = match gateway.rate_initial_credibility(&item.text) {
            Ok(v) => v,
            Err(_) => {
                summary.lock().unwrap().errored += kinds.len();
                return;
            }
        };
        for t in kinds {
            match rectify_one_with_initial(item, t, v_initial, gateway, cfg) {
                Ok(outcome) => {
                    let _guard = store.lock().unwrap();
                    match append_store(store_path, &outcome.record) {
                        Ok(()) => {
                            let mut s = summary.lock().unwrap();
                            match outcome.terminal_reason {
                                TerminalReason::Qualified => s.qualified += 1,
                                TerminalReason::BudgetExhausted => s.exhausted += 1,
                            }
                        }
                        Err(e) => {
                            *io_error.lock().unwrap() = Some(e);
                        }
                    }
                }
                Err(_) => {
                    summary.lock().unwrap().errored += 1;
                }
            }
        }
    };

    let parallel_ok = !gateway.backend.is_mock() && cfg.workers > 1;
    run_over_items(items, parallel_ok, cfg.workers, process_item);

    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(summary.into_inner().unwrap())
}

#[cfg(feature = "parallel")]
fn run_over_items<F: Fn(&NewsItem) + Sync>(
    items: &[NewsItem],
    parallel: bool,
    workers: usize,
    f: F,
) {
    if parallel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            use rayon::prelude::*;
            items.par_iter().for_each(|item| f(item));
        });
    } else {
        items.iter().for_each(|item| f(item));
    }
}

#[cfg(not(feature = "parallel"))]
fn run_over_items<F: Fn(&NewsItem) + Sync>(
    items: &[NewsItem],
    _parallel: bool,
    _workers: usize,
    f: F,
) {
    items.iter().for_each(|item| f(item));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Dataset;
    use crate::gateway::MockBackend;

    fn news(id: &str, label: BinaryLabel) -> NewsItem {
        NewsItem {
            id: id.to_string(),
            text: format!("text of {id}"),
            raw_label: label.as_str().to_string(),
            label,
            dataset: Dataset::Synthetic,
        }
    }

    fn score(v: i64) -> CredibilityScore {
        CredibilityScore::new(v).unwrap()
    }

    #[test]
    fn alteration_state_branches() {
        use AlterationState::*;
        assert_eq!(select_alteration(BinaryLabel::Fake, ReasoningType::Positive), Decrease);
        assert_eq!(select_alteration(BinaryLabel::Real, ReasoningType::Positive), Increase);
        assert_eq!(select_alteration(BinaryLabel::Fake, ReasoningType::Negative), Increase);
        assert_eq!(select_alteration(BinaryLabel::Real, ReasoningType::Negative), Decrease);
    }

    #[test]
    fn needs_rectify_hand_evaluated() {
        let cfg = Sr3Config::default();
        // fake positive: 80 > 50 and 80-70 > 0
        assert!(needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Positive,
            score(80),
            score(70),
            &cfg
        ));
        // fake positive: -10 > 0 fails, conjunction false
        assert!(!needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Positive,
            score(60),
            score(70),
            &cfg
        ));
        // fake negative: 25 - 30 = -5 < 0
        assert!(needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Negative,
            score(25),
            score(30),
            &cfg
        ));
    }

    #[test]
    fn disjunction_mode_enforces_both_conditions() {
        let cfg = Sr3Config {
            strict_conjunction: false,
            ..Default::default()
        };
        // v=60 > M violated even though the delta condition holds
        assert!(needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Positive,
            score(60),
            score(70),
            &cfg
        ));
        assert!(!needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Positive,
            score(40),
            score(70),
            &cfg
        ));
    }

    #[test]
    fn fake_positive_one_rectification() {
        let mock = MockBackend::new([
            "SCORE: 70",
            "REASONING: r1 SCORE: 80",
            "REASONING: r2 SCORE: 45",
        ]);
        let gw = Gateway::new(&mock);
        let outcome = rectify_one(
            &news("a", BinaryLabel::Fake),
            ReasoningType::Positive,
            &gw,
            &Sr3Config::default(),
        )
        .unwrap();
        assert_eq!(outcome.record.score_trace, vec![80, 45]);
        assert_eq!(outcome.record.iterations_used, 1);
        assert_eq!(outcome.record.score, 45);
        assert!(outcome.record.qualified);
        assert_eq!(outcome.terminal_reason, TerminalReason::Qualified);
    }

    #[test]
    fn fake_negative_one_rectification() {
        let mock = MockBackend::new([
            "SCORE: 30",
            "REASONING: r1 SCORE: 25",
            "REASONING: r2 SCORE: 55",
        ]);
        let gw = Gateway::new(&mock);
        let outcome = rectify_one(
            &news("a", BinaryLabel::Fake),
            ReasoningType::Negative,
            &gw,
            &Sr3Config::default(),
        )
        .unwrap();
        assert_eq!(outcome.record.score_trace, vec![25, 55]);
        assert_eq!(outcome.record.iterations_used, 1);
        assert!(outcome.record.qualified);
    }

    #[test]
    fn budget_exhaustion() {
        let mock = MockBackend::new([
            "SCORE: 70",
            "REASONING: r SCORE: 90",
            "REASONING: r SCORE: 90",
            "REASONING: r SCORE: 90",
            "REASONING: r SCORE: 90",
        ]);
        let gw = Gateway::new(&mock);
        let cfg = Sr3Config {
            max_iter: 3,
            ..Default::default()
        };
        let outcome = rectify_one(
            &news("a", BinaryLabel::Fake),
            ReasoningType::Positive,
            &gw,
            &cfg,
        )
        .unwrap();
        assert_eq!(outcome.record.score_trace.len(), 4);
        assert_eq!(outcome.record.iterations_used, 3);
        assert!(!outcome.record.qualified);
        assert_eq!(outcome.terminal_reason, TerminalReason::BudgetExhausted);
    }

    #[test]
    fn qualified_implies_predicate_false() {
        let mock = MockBackend::new(["SCORE: 70", "REASONING: r SCORE: 40"]);
        let gw = Gateway::new(&mock);
        let cfg = Sr3Config::default();
        let outcome = rectify_one(
            &news("a", BinaryLabel::Fake),
            ReasoningType::Positive,
            &gw,
            &cfg,
        )
        .unwrap();
        assert!(outcome.record.qualified);
        assert!(!needs_rectify(
            BinaryLabel::Fake,
            ReasoningType::Positive,
            score(outcome.record.score as i64),
            score(70),
            &cfg
        ));
    }

    #[test]
    fn corpus_run_counts_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("store.jsonl");
        let items = vec![news("a", BinaryLabel::Fake), news("b", BinaryLabel::Real)];
        // per item: 1 rating + immediate qualification for both kinds
        let mock = MockBackend::new([
            "SCORE: 70",
            "REASONING: ap SCORE: 40", // fake positive, 40<=50 qualifies
            "REASONING: an SCORE: 80", // fake negative, 80-70>=0 qualifies
            "SCORE: 40",
            "REASONING: bp SCORE: 60", // real positive qualifies (60>=50)
            "REASONING: bn SCORE: 30", // real negative qualifies (30-40<=0)
        ]);
        let gw = Gateway::new(&mock);
        let summary = rectify_corpus(&items, &gw, &Sr3Config::default(), &store).unwrap();
        assert_eq!(
            summary,
            CorpusSummary {
                qualified: 4,
                exhausted: 0,
                errored: 0
            }
        );
        assert_eq!(read_store(&store).unwrap().len(), 4);

        // rerun: everything already present, nothing consumed, no new entries
        let mock = MockBackend::new(Vec::<String>::new());
        let gw = Gateway::new(&mock);
        let summary = rectify_corpus(&items, &gw, &Sr3Config::default(), &store).unwrap();
        assert_eq!(summary, CorpusSummary::default());
        assert_eq!(read_store(&store).unwrap().len(), 4);
    }

    #[test]
    fn corpus_partial_failure_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("store.jsonl");
        let items = vec![news("a", BinaryLabel::Fake)];
        // positive qualifies, then the negative call exhausts the script
        let mock = MockBackend::new(["SCORE: 70", "REASONING: ap SCORE: 40"]);
        let gw = Gateway::new(&mock);
        let summary = rectify_corpus(&items, &gw, &Sr3Config::default(), &store).unwrap();
        assert_eq!(
            summary,
            CorpusSummary {
                qualified: 1,
                exhausted: 0,
                errored: 1
            }
        );
        let entries = read_store(&store).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].kind, ReasoningKind::Positive);
    }
}
