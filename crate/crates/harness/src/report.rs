//! Study reports and their text and CSV renderings.

use std::fmt::Write as _;

use drt_core::scoring::{
    analyze_sessions, bonus_candidates, bonus_ranking, Aggregate, BonusRanking, ConditionComparison, ConditionReport,
    ScoringError,
};
use drt_core::session::{evaluate_catch, filter_submission, CatchResult, Session, SessionState, Verdict};
use serde::{Deserialize, Serialize};

use crate::study::StudyDefinition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionVerdict {
    pub session_id: String,
    pub participant_id: String,
    pub block_id: u32,
    pub state: SessionState,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catch: Option<CatchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: String,
    pub condition: String,
    pub report: ConditionReport,
    /// Ranking of included sessions by catch trials answered correctly.
    pub bonus: BonusRanking,
    pub sessions: Vec<SessionVerdict>,
}

/// Filters, scores and ranks the sessions of one study.
pub fn study_report<'a>(
    def: &StudyDefinition,
    sessions: impl IntoIterator<Item = &'a Session> + Clone,
) -> Result<StudyReport, ScoringError> {
    let report = analyze_sessions(&def.condition, &def.word_list, sessions.clone(), &def.protocol)?;
    let mut verdicts = Vec::new();
    let mut included = Vec::new();
    for s in sessions {
        let verdict = filter_submission(s, &def.protocol);
        if verdict == Verdict::Included {
            included.push(s);
        }
        verdicts.push(SessionVerdict {
            session_id: s.session_id.clone(),
            participant_id: s.participant.participant_id.clone(),
            block_id: s.block_id,
            state: s.state,
            verdict,
            catch: evaluate_catch(s).ok(),
        });
    }
    verdicts.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let bonus = bonus_ranking(&bonus_candidates(included), def.bonus.top_fraction, def.bonus.minor_units);
    Ok(StudyReport { study_id: def.study_id.clone(), condition: def.condition.clone(), report, bonus, sessions: verdicts })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

fn aggregate_cells(a: &Aggregate) -> [String; 4] {
    [a.n.to_string(), format!("{:.2}", a.mean), opt(a.sd, 2), opt(a.ci95_half_width, 2)]
}

/// Left-aligns the first column and right-aligns the rest.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn condition_text(r: &ConditionReport) -> String {
    let mut out = String::new();
    let t = &r.sessions;
    let _ = writeln!(out, "Condition {}", r.condition);
    let _ = writeln!(out, "Sessions: {} total, {} included", t.total, t.included);
    for (reason, n) in &t.excluded {
        let _ = writeln!(out, "  excluded ({reason}): {n}");
    }
    let rs = &r.responses;
    let _ = writeln!(
        out,
        "Responses: {} over {} files ({} to {} per file, mean {:.2})",
        rs.total,
        r.files.len(),
        rs.min_per_file,
        rs.max_per_file,
        rs.mean_per_file
    );
    let _ = writeln!(out, "Interval: {}", r.ci_method);
    out.push('\n');
    let mut rows = vec![[vec!["overall".to_string()], aggregate_cells(&r.overall).to_vec()].concat()];
    rows.extend(r.features.iter().map(|f| [vec![f.feature_class.clone()], aggregate_cells(&f.aggregate).to_vec()].concat()));
    out.push_str(&table(&["feature_class", "files", "mean", "sd", "ci95"], &rows));
    out
}

pub fn study_text(r: &StudyReport) -> String {
    let mut out = format!("Study {}\n", r.study_id);
    out.push_str(&condition_text(&r.report));
    let b = &r.bonus;
    let _ = writeln!(
        out,
        "\nBonus: top {:.0}% of {} included sessions, {} flagged, {} minor units each",
        b.top_fraction * 100.0,
        b.entries.len(),
        b.cutoff,
        b.bonus_minor_units
    );
    let rows: Vec<Vec<String>> = b
        .entries
        .iter()
        .filter(|e| e.bonus)
        .map(|e| {
            vec![
                e.rank.to_string(),
                e.candidate.participant_id.clone(),
                e.candidate.session_id.clone(),
                e.candidate.validation_correct.to_string(),
                e.candidate.completed_at.to_string(),
            ]
        })
        .collect();
    if !rows.is_empty() {
        out.push_str(&table(&["rank", "participant", "session", "catch_correct", "completed_at"], &rows));
    }
    out
}

/// Per-file scores: `recording_id,pair_id,feature_class,R,W,pc`.
pub fn files_csv(r: &ConditionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["recording_id", "pair_id", "feature_class", "R", "W", "pc"]).expect("in-memory csv");
    for f in &r.files {
        w.write_record([
            f.recording_id.as_str(),
            f.pair_id.as_str(),
            &f.feature_class,
            &f.r.to_string(),
            &f.w.to_string(),
            &format!("{:.4}", f.pc),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
}

pub fn comparison_text(c: &ConditionComparison) -> String {
    let mut out = String::new();
    let t = &c.test;
    let _ = writeln!(out, "Comparison {} vs {}", c.first, c.second);
    let _ = writeln!(out, "Gap: {:.2} points (se {})", c.gap, opt(c.gap_se, 2));
    let _ = writeln!(
        out,
        "Test: {:?} t = {:.3}, df = {:.1}, p = {:.4}, {} at alpha {}",
        t.method,
        t.statistic,
        t.df,
        t.p,
        if t.significant { "significant" } else { "not significant" },
        t.alpha
    );
    let _ = writeln!(out, "Files: {} and {}", c.n_first, c.n_second);
    if let Some(rho) = &c.feature_correlation {
        let _ = writeln!(out, "Feature-mean correlation: r = {:.3} (p = {:.4}, n = {})", rho.rho, rho.p, rho.n);
    }
    out.push('\n');
    let rows: Vec<Vec<String>> = c
        .features
        .iter()
        .map(|f| {
            vec![
                f.feature_class.clone(),
                format!("{:.2}", f.gap),
                opt(f.test.as_ref().map(|t| t.statistic), 3),
                opt(f.test.as_ref().map(|t| t.p), 4),
            ]
        })
        .collect();
    out.push_str(&table(&["feature_class", "gap", "t", "p"], &rows));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let t = table(&["a", "bb"], &[vec!["long".into(), "1".into()], vec!["x".into(), "22".into()]]);
        assert_eq!(t, "a     bb\nlong   1\nx     22\n");
    }
}
