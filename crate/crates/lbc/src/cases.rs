//! Hand-verified kernel cases: a JSON case file and its runner.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::metrics::tracking_errors;
use crate::reward::{reward_breakdown, RewardConfig};
use crate::sampling::{sample_command, sample_domain_randomization, CommandRanges, RandomizationRanges};
use crate::state::{assemble_proprio, dagger_loss, Command, RobotState};

/// The case file shipped with the crate.
pub const BUNDLED_CASES: &str = include_str!("../cases/lbc_cases.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    #[serde(default)]
    pub state: RobotState,
    #[serde(default)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseKind {
    /// Keys name raw term values, `<term>.contribution` or `total`.
    Reward {
        #[serde(default)]
        state: RobotState,
        #[serde(default)]
        command: Command,
    },
    /// Keys are `e_v`, `e_w`, `e_h`, `e_y`, `e_p`, `e_r`.
    Tracking { trajectory: Vec<TrajectoryStep> },
    /// Key `loss`.
    Dagger { student: Vec<f64>, teacher: Vec<f64> },
    /// Keys are `index.<i>` into the proprio vector, or `len`.
    Proprio {
        #[serde(default)]
        state: RobotState,
    },
    /// Draws commands and checks each lies in the default ranges.
    CommandSampler { seed: u64, draws: usize },
    /// Draws randomization records and checks each lies in the default ranges.
    RandomizationSampler { seed: u64, draws: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    #[serde(flatten)]
    pub kind: CaseKind,
    #[serde(default)]
    pub expected: BTreeMap<String, f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub cases: Vec<Case>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn parse_cases(text: &str) -> Result<CaseFile> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| LbcError::Cases(e.to_string()))?;
    if file.cases.is_empty() {
        return Err(LbcError::Cases("no cases".into()));
    }
    Ok(file)
}

fn compare(expected: &BTreeMap<String, f64>, tol: f64, actual: impl Fn(&str) -> Option<f64>) -> (bool, String) {
    let mut failures = Vec::new();
    for (key, &want) in expected {
        match actual(key) {
            Some(got) if (got - want).abs() <= tol => {}
            Some(got) => failures.push(format!("{key}: expected {want}, got {got}")),
            None => failures.push(format!("{key}: unknown quantity")),
        }
    }
    if failures.is_empty() {
        (true, format!("{} values within {tol:e}", expected.len()))
    } else {
        (false, failures.join("; "))
    }
}

pub fn run_case(case: &Case) -> CaseResult {
    let outcome: Result<(bool, String)> = (|| match &case.kind {
        CaseKind::Reward { state, command } => {
            let b = reward_breakdown(state, command, &RewardConfig::default())?;
            Ok(compare(&case.expected, case.tol, |k| {
                if k == "total" {
                    return Some(b.total);
                }
                match k.strip_suffix(".contribution") {
                    Some(name) => b.term(name).map(|t| t.contribution()),
                    None => b.term(k).map(|t| t.value),
                }
            }))
        }
        CaseKind::Tracking { trajectory } => {
            let pairs: Vec<_> = trajectory.iter().map(|s| (s.state.clone(), s.command)).collect();
            let e = tracking_errors(&pairs)?;
            Ok(compare(&case.expected, case.tol, |k| e.get(k)))
        }
        CaseKind::Dagger { student, teacher } => {
            let l = dagger_loss(student, teacher)?;
            Ok(compare(&case.expected, case.tol, |k| (k == "loss").then_some(l)))
        }
        CaseKind::Proprio { state } => {
            let p = assemble_proprio(state);
            Ok(compare(&case.expected, case.tol, |k| {
                if k == "len" {
                    return Some(p.len() as f64);
                }
                k.strip_prefix("index.").and_then(|i| i.parse::<usize>().ok()).and_then(|i| p.get(i).copied())
            }))
        }
        CaseKind::CommandSampler { seed, draws } => {
            let ranges = CommandRanges::default();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for i in 0..*draws {
                let c = sample_command(&mut rng, &ranges)?;
                if !ranges.contains(&c) {
                    return Ok((false, format!("draw {i} out of range: {c:?}")));
                }
            }
            Ok((true, format!("{draws} commands within range")))
        }
        CaseKind::RandomizationSampler { seed, draws } => {
            let ranges = RandomizationRanges::default();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for i in 0..*draws {
                let r = sample_domain_randomization(&mut rng);
                if !r.within(&ranges) {
                    return Ok((false, format!("draw {i} out of range: {r:?}")));
                }
            }
            Ok((true, format!("{draws} randomization records within range")))
        }
    })();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CaseResult { name: case.name.clone(), passed, detail }
}

pub fn run_cases(file: &CaseFile) -> Vec<CaseResult> {
    file.cases.iter().map(run_case).collect()
}
