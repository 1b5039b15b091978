//! The researcher workflow as plain functions over a loaded config: each
//! CLI subcommand is a thin wrapper around one of these.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use drt_core::blocks::{build_blocks, check_plans, inject_catch_trials, select_practice, BlockPlan, PracticeSet};
use drt_core::corpus::{TestSet, WordList};
use drt_core::rng::split_seed;
use drt_core::scoring::{compare_conditions, ConditionComparison, TTestOptions, TestMethod};
use drt_core::session::DigitsTest;
use drt_core::simulator::{simulate_panel, ListenerModel, PanelSpec, SimulatedSession};
use serde::Serialize;

use crate::condition::{apply_condition, render_digits};
use crate::config::{ConditionSpec, LoadedConfig};
use crate::curate::{curate_manifest, CurationReport, MANIFEST_FILE, WB_CONDITION};
use crate::error::{read_to_string, write_atomic, HarnessError, Result};
use crate::eventlog::{EventLogRecord, Payload, SessionOpened};
use crate::formats::{load_valid_manifest, load_word_list, parse_id_list};
use crate::report::{comparison_text, files_csv, study_report, study_text, StudyReport};
use crate::study::{StudyDefinition, StudyExport, StudyStatus};

/// File written by [`make_blocks`] under the output root.
pub const STUDY_DEFINITION_FILE: &str = "study_definition.json";
pub const EXPORT_FILE: &str = "export.json";
pub const SIM_DIR: &str = "sim";

fn invalid(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::invalid(e)
}

/// Serializes with a trailing newline.
pub fn to_json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn word_list(lc: &LoadedConfig) -> Result<WordList> {
    load_word_list(&lc.resolve(&lc.config.word_list), &lc.config.language)
}

fn set_dir(out: &Path, label: &str) -> PathBuf {
    out.join(label)
}

/// Curates the raw recordings into `<out>/WB`.
pub fn curate(lc: &LoadedConfig, out: &Path) -> Result<CurationReport> {
    let c = &lc.config;
    let raw = c.raw_manifest.as_ref().ok_or_else(|| invalid("config has no raw_manifest"))?;
    let list = word_list(lc)?;
    let excluded = match &c.curation.exclude_list {
        Some(p) => parse_id_list(&read_to_string(&lc.resolve(p))?),
        None => BTreeSet::new(),
    };
    curate_manifest(&lc.resolve(raw), &list, &c.curation, c.instances_per_word, &excluded, &set_dir(out, WB_CONDITION))
}

/// Derives the configured condition from the curated wideband set.
pub fn apply_configured_condition(lc: &LoadedConfig, out: &Path) -> Result<TestSet> {
    let c = &lc.config;
    let list = word_list(lc)?;
    let wb_dir = set_dir(out, WB_CONDITION);
    let wb = load_valid_manifest(&wb_dir.join(MANIFEST_FILE), &list, c.instances_per_word)?;
    if matches!(c.condition, ConditionSpec::Wb) {
        return Ok(wb);
    }
    let label = c.condition.label();
    if label == WB_CONDITION {
        return Err(invalid("a derived condition cannot be labelled WB"));
    }
    apply_condition(&wb, &wb_dir, &c.condition, &set_dir(out, label))
}

/// Prefixes every audio path with `dir/`, making it relative to the output
/// root rather than to the set's own directory.
fn rebase(set: &TestSet, dir: &str) -> TestSet {
    let mut set = set.clone();
    for r in &mut set.recordings {
        r.audio = format!("{dir}/{}", r.audio);
    }
    set
}

/// Blocks, catch trials, practice and digits for one condition.
fn plan(
    lc: &LoadedConfig,
    list: &WordList,
    set: &TestSet,
    wb: &TestSet,
) -> Result<(Vec<BlockPlan>, PracticeSet, DigitsTest)> {
    let c = &lc.config;
    let s = &c.seeds;
    let blocks = build_blocks(set, list, c.blocks, s.blocks).map_err(invalid)?;
    if let Some(v) = check_plans(&blocks, set).first() {
        return Err(invalid(format!("block plan check failed: {v:?}")));
    }
    let blocks = blocks
        .iter()
        .map(|b| inject_catch_trials(b, wb, list, c.catch_trials, c.catch_policy, s.catch))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let practice = select_practice(wb, list, c.practice_items, s.practice).map_err(invalid)?;
    let digits = DigitsTest::generate(&c.digits.snrs_db, s.digits);
    Ok((blocks, practice, digits))
}

fn definition(lc: &LoadedConfig, study_id: String, list: WordList, set: &TestSet, wb: &TestSet) -> Result<StudyDefinition> {
    let c = &lc.config;
    let (blocks, practice, digits) = plan(lc, &list, set, wb)?;
    let def = StudyDefinition {
        study_id,
        condition: set.condition.clone(),
        language: c.language.clone(),
        word_list: list,
        blocks,
        practice,
        digits,
        protocol: c.protocol.clone(),
        session_seed: c.seeds.sessions,
        bonus: c.bonus.clone(),
        status: StudyStatus::Open,
    };
    def.validate()?;
    Ok(def)
}

/// Builds the study definition of the configured condition and writes it
/// to `<out>/study_definition.json`. Audio paths are relative to `out`;
/// digit stimuli are rendered when digit recordings are configured.
pub fn make_blocks(lc: &LoadedConfig, out: &Path) -> Result<StudyDefinition> {
    let c = &lc.config;
    let list = word_list(lc)?;
    let label = c.condition.label();
    let set = load_valid_manifest(&set_dir(out, label).join(MANIFEST_FILE), &list, c.instances_per_word)?;
    let wb = load_valid_manifest(&set_dir(out, WB_CONDITION).join(MANIFEST_FILE), &list, c.instances_per_word)?;
    let def = definition(lc, c.study_id.clone(), list, &rebase(&set, label), &rebase(&wb, WB_CONDITION))?;
    if let Some(dir) = &c.digits.recordings {
        render_digits(&def.digits, &lc.resolve(dir), c.digits.gap_ms, c.seeds.noise, out)?;
    }
    write_atomic(&out.join(STUDY_DEFINITION_FILE), to_json_pretty(&def).as_bytes())?;
    Ok(def)
}

/// Event records equivalent to a simulated session, numbered from `seq`.
pub fn simulated_records(sim: &SimulatedSession, seq: &mut u64) -> Vec<EventLogRecord> {
    let init = &sim.init;
    let mut out = Vec::with_capacity(sim.events.len() + 1);
    let opened = SessionOpened {
        participant: init.participant.clone(),
        block_id: init.block.block_id,
        order_seed: init.order_seed,
        created_at: init.created_at,
    };
    let mut push = |wall_time, payload| {
        out.push(EventLogRecord { seq: *seq, session_id: init.session_id.clone(), wall_time, payload });
        *seq += 1;
    };
    push(init.created_at, Payload::SessionOpened(opened));
    for e in &sim.events {
        push(e.at(), Payload::Event { event: e.clone() });
    }
    out
}

/// Result of one simulated condition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStudy {
    pub export: StudyExport,
    pub report: StudyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub studies: Vec<SimulatedStudy>,
    pub comparison: Option<ConditionComparison>,
}

/// Simulates a listener panel for every configured condition, then
/// analyses each panel and compares the first two.
pub fn simulate(lc: &LoadedConfig) -> Result<SimulationOutcome> {
    let c = &lc.config;
    let sim = &c.simulation;
    if sim.conditions.is_empty() {
        return Err(invalid("simulation.conditions is empty"));
    }
    let list = word_list(lc)?;
    let load = |p: &Path| load_valid_manifest(&lc.resolve(p), &list, c.instances_per_word);
    let wb = load(sim.wb_manifest.as_deref().unwrap_or(&sim.conditions[0].manifest))?;
    let mut studies = Vec::new();
    for (i, cond) in sim.conditions.iter().enumerate() {
        let set = load(&cond.manifest)?;
        let def = definition(lc, format!("{}-{}", c.study_id, set.condition), list.clone(), &set, &wb)?;
        let export = simulate_study(&def, &cond.model, sim.listeners_per_block, split_seed(c.seeds.simulation, i as u64))?;
        let report = analyze(&export)?;
        studies.push(SimulatedStudy { export, report });
    }
    let comparison = match studies.as_slice() {
        [a, b, ..] => Some(compare(&a.report, &b.report, sim.paired)?),
        _ => None,
    };
    Ok(SimulationOutcome { studies, comparison })
}

/// Runs `listeners_per_block` simulated listeners on every block of `def`.
pub fn simulate_study(def: &StudyDefinition, model: &ListenerModel, listeners_per_block: usize, seed: u64) -> Result<StudyExport> {
    let spec = PanelSpec {
        study_id: def.study_id.clone(),
        blocks: def.blocks.clone(),
        practice: def.practice.clone(),
        digits: def.digits.clone(),
        config: def.protocol.clone(),
    };
    let sims = simulate_panel(&spec, model, listeners_per_block, seed).map_err(invalid)?;
    let mut seq = 1;
    let records = sims.iter().flat_map(|s| simulated_records(s, &mut seq)).collect();
    Ok(StudyExport::new(def.clone(), records))
}

pub fn load_export(path: &Path) -> Result<StudyExport> {
    StudyExport::parse(&read_to_string(path)?).map_err(|e| e.in_file(path))
}

pub fn analyze(export: &StudyExport) -> Result<StudyReport> {
    let sessions = export.sessions()?;
    study_report(&export.study, sessions.values()).map_err(invalid)
}

pub fn compare(first: &StudyReport, second: &StudyReport, paired: bool) -> Result<ConditionComparison> {
    let method = if paired { TestMethod::Paired } else { TestMethod::Welch };
    compare_conditions(&first.report, &second.report, TTestOptions { method, ..TTestOptions::default() }).map_err(invalid)
}

/// Writes `report.json`, `report.txt` and `files.csv` into `dir`.
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), to_json_pretty(report).as_bytes())?;
    write_atomic(&dir.join("report.txt"), study_text(report).as_bytes())?;
    write_atomic(&dir.join("files.csv"), files_csv(&report.report).as_bytes())
}

pub fn write_comparison(dir: &Path, comparison: &ConditionComparison) -> Result<()> {
    write_atomic(&dir.join("comparison.json"), to_json_pretty(comparison).as_bytes())?;
    write_atomic(&dir.join("comparison.txt"), comparison_text(comparison).as_bytes())
}

/// Writes every export and report of a simulation under `dir`.
pub fn write_simulation(dir: &Path, outcome: &SimulationOutcome) -> Result<()> {
    for s in &outcome.studies {
        let sub = dir.join(&s.report.condition);
        write_atomic(&sub.join(EXPORT_FILE), to_json_pretty(&s.export).as_bytes())?;
        write_report(&sub, &s.report)?;
    }
    if let Some(c) = &outcome.comparison {
        write_comparison(dir, c)?;
    }
    Ok(())
}
