use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use htd_core::data::{read_dataset, write_dataset, Dataset, GeneratorConfig};
use htd_core::eval::{
    ablation_report, export_latent_heatmap, rollout_dream_trace, DreamSource, DreamTrace, LatentTargets,
    OracleDreams, PolicyDreams, RunSummary,
};
use htd_core::policy::PolicyConfig;
use htd_core::tactile::RegionId;
use htd_core::training::{self, load_checkpoint, RunOptions, TrainConfig, TrainState};
use htd_core::HtdError;
use htd_lbc::cases::{parse_cases, run_cases, BUNDLED_CASES};

use crate::{EvalArgs, GenDataArgs, LbcCheckArgs, TrainArgs, OUTPUT_ROOT_ENV};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<HtdError> for CliError {
    fn from(e: HtdError) -> Self {
        match e {
            HtdError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn out_dir(out: Option<PathBuf>, default_name: &str) -> CliResult<PathBuf> {
    if let Some(p) = out {
        return Ok(p);
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(default_name)),
        None => Err(CliError::Usage(format!("--out is required when {OUTPUT_ROOT_ENV} is not set"))),
    }
}

fn require_dir(p: &Path, what: &str) -> CliResult<()> {
    if !p.is_dir() {
        return Err(CliError::Usage(format!("{what} {} is not a directory", p.display())));
    }
    Ok(())
}

fn require_file(p: &Path, what: &str) -> CliResult<()> {
    if !p.is_file() {
        return Err(CliError::Usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(())
}

fn read_toml(path: &Path) -> CliResult<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, file: Option<&toml::Table>) -> CliResult<T> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(file) = file {
        merge(&mut table, file.clone());
    }
    table.try_into().map_err(|e: toml::de::Error| CliError::Usage(e.to_string()))
}

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let out = out_dir(a.out, "data")?;
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let mut cfg = GeneratorConfig::default();
    if let Some(s) = a.image_size {
        cfg.schema.image_height = s;
        cfg.schema.image_width = s;
    }
    if let Some(n) = a.episode_len {
        cfg.episode_len = n;
    }
    if let Some(p) = &a.config {
        require_file(p, "config")?;
        cfg = overlay(&cfg, Some(&read_toml(p)?))?;
    }
    cfg.validate()?;
    let ds = Dataset::synthetic(&cfg, a.episodes, a.seed)?;
    let manifest = write_dataset(&ds, &out)?;
    let steps: usize = manifest.episodes.iter().map(|e| e.meta.len).sum();
    println!(
        "wrote {} episodes ({steps} steps, {} values per step) to {}",
        manifest.episodes.len(),
        manifest.record_len,
        out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    require_dir(&a.data, "dataset")?;
    let out = out_dir(a.out, "run")?;
    let ds = read_dataset(&a.data)?;

    let state = if let Some(ckpt) = &a.resume {
        require_dir(ckpt, "checkpoint")?;
        let (mut state, _) = load_checkpoint(ckpt)?;
        if let Some(steps) = a.steps {
            state.config.steps = steps;
        }
        state
    } else {
        let mut cfg = TrainConfig::default();
        if a.small {
            cfg.policy = PolicyConfig::small();
        }
        if let Some(v) = a.variant {
            cfg = cfg.with_variant(v);
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(s) = a.steps {
            cfg.steps = s;
        }
        if let Some(t) = a.targets {
            cfg.targets = t;
        }
        let file = match &a.config {
            Some(p) => {
                require_file(p, "config")?;
                Some(read_toml(p)?)
            }
            None => None,
        };
        let mut cfg = overlay(&cfg, file.as_ref())?;
        let loss_key = |k: &str| {
            file.as_ref()
                .and_then(|f| f.get("loss"))
                .and_then(|l| l.as_table())
                .is_some_and(|l| l.contains_key(k))
        };
        if !cfg.variant().dreams() {
            if !loss_key("lambda_force") {
                cfg.loss.lambda_force = 0.0;
            }
            if !loss_key("lambda_tactile") {
                cfg.loss.lambda_tactile = 0.0;
            }
        }
        cfg.validate()?;
        TrainState::new(cfg, &ds.schema)?
    };

    fs::create_dir_all(&out).map_err(|e| CliError::Domain(format!("{}: {e}", out.display())))?;
    let echo = toml::to_string(&state.config).map_err(|e| CliError::Domain(e.to_string()))?;
    fs::write(out.join("config.toml"), &echo).map_err(|e| CliError::Domain(e.to_string()))?;
    println!(
        "training {} for {} steps (lambda_force = {}, lambda_tactile = {})",
        state.config.variant(),
        state.config.steps,
        state.config.loss.lambda_force,
        state.config.loss.lambda_tactile
    );
    let outcome = training::resume(state, &ds, RunOptions { out_dir: Some(&out), on_step: None })?;
    let s = &outcome.summary;
    println!(
        "done: step {}, bc {:.6} -> {:.6}, total {:.6}",
        s.steps,
        s.initial.bc(),
        s.last.bc(),
        s.last.total
    );
    if let Some(m) = s.dream_force_mae {
        println!("dream force MAE {m:.6}");
    }
    if let Some(c) = s.collapse_metric {
        println!("collapse metric {c:.6}");
    }
    Ok(())
}

fn write_trace(trace: &DreamTrace, path: &Path) -> CliResult<()> {
    let mut text = String::from("step,chunk_start");
    let width = trace.steps.first().map_or(0, |s| s.true_force.len());
    for k in 0..width {
        text.push_str(&format!(",pred_force_{k},true_force_{k}"));
    }
    if trace.similarity.iter().any(Option::is_some) {
        for r in 0..RegionId::COUNT {
            text.push_str(&format!(",similarity_{}", RegionId::from_slot(r)));
        }
    }
    text.push('\n');
    for (s, sim) in trace.steps.iter().zip(&trace.similarity) {
        text.push_str(&format!("{},{}", s.step, s.chunk_start));
        for k in 0..width {
            text.push_str(&format!(",{:?},{:?}", s.pred_force[k], s.true_force[k]));
        }
        if let Some(sim) = sim {
            for v in sim {
                text.push_str(&format!(",{v:?}"));
            }
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    if a.data.is_none() && a.runs.is_empty() {
        return Err(CliError::Usage("eval needs --data (dream traces) or --runs (ablation table)".into()));
    }
    if a.data.is_some() && a.checkpoint.is_none() && !a.oracle {
        return Err(CliError::Usage("dream traces need --checkpoint or --oracle".into()));
    }
    let fingers: Vec<RegionId> = a.finger.iter().map(|f| f.parse()).collect::<Result<_, _>>()?;
    let out = out_dir(a.out, "eval")?;
    fs::create_dir_all(&out).map_err(|e| CliError::Domain(format!("{}: {e}", out.display())))?;

    if let Some(data) = &a.data {
        require_dir(data, "dataset")?;
        let ds = read_dataset(data)?;
        let state = match &a.checkpoint {
            Some(c) => {
                require_dir(c, "checkpoint")?;
                let (state, manifest) = load_checkpoint(c)?;
                if manifest.schema != ds.schema {
                    return Err(CliError::Domain(format!(
                        "checkpoint was trained on schema {:?} but the dataset has {:?}",
                        manifest.schema, ds.schema
                    )));
                }
                Some(state)
            }
            None => None,
        };
        let tau = match (&state, a.tau) {
            (Some(s), _) => s.config.policy.dream_horizon,
            (None, Some(t)) => t,
            (None, None) => PolicyConfig::default().dream_horizon,
        };
        let stride = a.stride.unwrap_or(tau);
        let targets = state
            .as_ref()
            .map(|s| LatentTargets { encoder: s.policy.tactile_encoder(), params: s.target_encoder_params() });
        let source: Box<dyn DreamSource + '_> = match (&state, a.oracle) {
            (_, true) => Box::new(OracleDreams { targets }),
            (Some(s), false) => Box::new(PolicyDreams { policy: &s.policy, params: &s.params }),
            (None, false) => unreachable!(),
        };
        let trace = rollout_dream_trace(source.as_ref(), &ds, a.episode, stride, tau, targets)?;
        write_trace(&trace, &out.join("trace.csv"))?;

        let mut report = format!(
            "episode\t{}\nstride\t{stride}\ntau\t{tau}\nsource\t{}\nforce_mae_left\t{:.6}\nforce_mae_right\t{:.6}\n",
            a.episode,
            if a.oracle { "oracle" } else { "policy" },
            trace.force_mae[0],
            trace.force_mae[1]
        );
        if let Some(m) = trace.mean_similarity() {
            report.push_str(&format!("latent_similarity_mean\t{m:.6}\n"));
        }
        fs::write(out.join("report.tsv"), &report).map_err(|e| CliError::Domain(e.to_string()))?;
        print!("{report}");

        for finger in &fingers {
            let slot = finger.slot();
            let dir = out.join("heatmaps").join(finger.to_string());
            let mut written = 0;
            for s in &trace.steps {
                for (tag, latent) in [("pred", &s.pred_latent), ("target", &s.true_latent)] {
                    if let Some(z) = latent {
                        let d = z.len() / RegionId::COUNT;
                        export_latent_heatmap(&z[slot * d..(slot + 1) * d], &dir, &format!("{tag}_t{:03}", s.step))?;
                        written += 1;
                    }
                }
            }
            if written == 0 {
                return Err(CliError::Domain(format!("no latent dreams to draw for {finger}")));
            }
            println!("wrote {written} heatmaps for {finger} to {}", dir.display());
        }
    } else if !fingers.is_empty() {
        return Err(CliError::Usage("--finger needs --data".into()));
    }

    if !a.runs.is_empty() {
        let mut summaries = Vec::new();
        for r in &a.runs {
            match RunSummary::read(r) {
                Ok(s) => summaries.push(s),
                Err(e) => eprintln!("skipping {}: {e}", r.display()),
            }
        }
        let report = ablation_report(&summaries);
        report.write(&out.join("ablation.tsv"))?;
        print!("{}", report.render());
    }
    Ok(())
}

pub fn lbc_check(a: LbcCheckArgs) -> CliResult<()> {
    let text = match &a.cases {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => BUNDLED_CASES.to_string(),
    };
    let file = parse_cases(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let results = run_cases(&file);
    let mut failed = Vec::new();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed.push(r.name.clone());
        }
    }
    println!("{}/{} cases passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("failing cases: {}", failed.join(", "))))
    }
}
