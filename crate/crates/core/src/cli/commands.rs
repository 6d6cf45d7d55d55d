use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::{
    build_adapter_stack, AdapterConfig, AdapterMethod, AdapterStack, FrozenModel, ProjectionTag,
};
use crate::analysis::{
    communication_heatmap, count_params, degeneracy_check, nonexpansive_audit, routing_load,
    stability_certificate, DegeneracyReport, ParamBudget, StabilityCertificate,
};
use crate::autodiff::{
    gradcheck_with, randomize_parameters, GradcheckReport, GradientSet, LossSpec, DEFAULT_EPSILON,
    GRADCHECK_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::geometry::ModelGeometry;
use crate::linalg::RngState;
use crate::tasks::{generate_cluster_task, lr_at, total_steps, train, ClusterTask, Sample, TrainLog};

use super::checkpoint::{bit_identical, decode, encode, load_checkpoint, read_header, save_checkpoint, Checkpoint, CheckpointHeader};
use super::config::{streams, RunConfig};
use super::CliError;

pub const LOSS_SCHEMA: &str = "#schema=loss/v1";
pub const ROUTING_SCHEMA: &str = "#schema=routing/v1";
pub const ROUTING_LOAD_SCHEMA: &str = "#schema=routing_load/v1";
pub const NONEXPANSIVE_SCHEMA: &str = "#schema=nonexpansive/v1";
pub const HEATMAP_SCHEMA: &str = "#schema=heatmap/v1";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Parameter budget of the configured method on the configured geometry.
/// Writes `params.json` into the output directory.
pub fn cmd_params(cfg: &RunConfig, base_dir: Option<&Path>) -> Result<ParamBudget> {
    cfg.validate()?;
    let geom = ModelGeometry::resolve(&cfg.geometry, base_dir)?;
    let budget = count_params(&geom, cfg.method, &cfg.adapter, &cfg.targets.tags()?)?;
    ensure_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("params.json"), to_json(&budget)?)?;
    Ok(budget)
}

/// Frozen model, adapter stack and task for a train config, all derived
/// from `cfg.seed`.
pub fn build_run(cfg: &RunConfig) -> Result<(FrozenModel, AdapterStack, ClusterTask)> {
    cfg.validate()?;
    let tag = cfg.train_target()?;
    let master = RngState::new(cfg.seed);
    let model = FrozenModel::random(
        cfg.model.layers,
        cfg.task.input_dim,
        cfg.task.output_dim,
        tag,
        &mut master.fork(streams::FROZEN),
    )?;
    let stack = build_adapter_stack(
        &model.geometry(),
        cfg.method,
        &cfg.adapter,
        &[tag],
        &master.fork(streams::ADAPTERS),
    )?;
    let task = generate_cluster_task(&cfg.task, &master.fork(streams::DATA))?;
    Ok((model, stack, task))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutputs {
    pub output_dir: PathBuf,
    pub loss_csv: PathBuf,
    pub routing_csv: PathBuf,
    pub log_json: PathBuf,
    pub checkpoint: PathBuf,
    pub final_eval_loss: f64,
    pub steps: usize,
}

pub fn loss_csv(cfg: &RunConfig, log: &TrainLog, train_len: usize) -> String {
    let total = total_steps(&cfg.train, train_len);
    let mut s = format!("{LOSS_SCHEMA}\nstep,lr,loss\n");
    for (t, l) in log.losses.iter().enumerate() {
        let _ = writeln!(s, "{},{:e},{:e}", t + 1, lr_at(&cfg.train, t, total), l);
    }
    s
}

pub fn routing_csv(log: &TrainLog) -> String {
    let mut s = format!("{ROUTING_SCHEMA}\nstep,layer,expert,mean_gate\n");
    for snap in &log.snapshots {
        for (layer, gates) in snap.mean_gates.iter().enumerate() {
            for (e, g) in gates.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{:e}", snap.step, layer, e, g);
            }
        }
    }
    s
}

/// Trains on the configured cluster task and writes `loss.csv`,
/// `routing.csv`, `train_log.json`, `checkpoint.tlkl` and `run_config.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs> {
    let (model, mut stack, task) = build_run(cfg)?;
    let mut rng = RngState::new(cfg.seed).fork(streams::TRAIN);
    let mut log = train(&mut stack, &model, &task.data, &cfg.train, cfg.loss, &mut rng)?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let ckpt_path = dir.join("checkpoint.tlkl");
    log.checkpoint = Some("checkpoint.tlkl".into());
    let outputs = TrainOutputs {
        loss_csv: dir.join("loss.csv"),
        routing_csv: dir.join("routing.csv"),
        log_json: dir.join("train_log.json"),
        checkpoint: ckpt_path.clone(),
        final_eval_loss: log.snapshots.last().map_or(f64::NAN, |s| s.eval_loss),
        steps: log.losses.len(),
        output_dir: dir.clone(),
    };
    write_file(&outputs.loss_csv, loss_csv(cfg, &log, task.data.train.len()))?;
    write_file(&outputs.routing_csv, routing_csv(&log))?;
    write_file(&outputs.log_json, to_json(&log)?)?;
    write_file(&dir.join("run_config.json"), to_json(cfg)?)?;
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            stack,
            frozen: Some(model),
            run_config: Some(cfg.clone()),
        },
    )?;
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subreport {
    Stability,
    Nonexpansive,
    Routing,
    Heatmap,
    Degeneracy,
}

impl FromStr for Subreport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stability" => Ok(Subreport::Stability),
            "nonexpansive" => Ok(Subreport::Nonexpansive),
            "routing" => Ok(Subreport::Routing),
            "heatmap" => Ok(Subreport::Heatmap),
            "degeneracy" => Ok(Subreport::Degeneracy),
            _ => Err(Error::config(
                "subreport",
                format!("`{s}` is not one of stability, nonexpansive, routing, heatmap, degeneracy"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeOptions {
    pub trials: usize,
    pub delta_scale: f64,
    pub seed: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            trials: 10_000,
            delta_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteCertificate {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub certificate: StabilityCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteDegeneracy {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub report: DegeneracyReport,
}

/// Report JSON and the files written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeOutputs {
    pub report: serde_json::Value,
    pub files: Vec<PathBuf>,
}

fn require_talklora(stack: &AdapterStack, what: &str) -> Result<()> {
    if stack.method() != AdapterMethod::TalkLora {
        return Err(Error::config(
            "method",
            format!("{what} needs a TalkLoRA checkpoint, found {}", stack.method()),
        ));
    }
    Ok(())
}

/// Eval split of the run recorded in a checkpoint.
fn recorded_eval_split(ckpt: &Checkpoint) -> Result<Vec<Sample>> {
    let cfg = ckpt
        .run_config
        .as_ref()
        .ok_or_else(|| Error::config("checkpoint", "no run config recorded; cannot rebuild data"))?;
    let task = generate_cluster_task(&cfg.task, &RngState::new(cfg.seed).fork(streams::DATA))?;
    Ok(task.data.eval)
}

pub fn cmd_analyze(
    checkpoint: &Path,
    sub: Subreport,
    out_dir: &Path,
    opts: &AnalyzeOptions,
) -> Result<AnalyzeOutputs> {
    let ckpt = load_checkpoint(checkpoint)?;
    analyze_checkpoint(&ckpt, sub, out_dir, opts)
}

pub fn analyze_checkpoint(
    ckpt: &Checkpoint,
    sub: Subreport,
    out_dir: &Path,
    opts: &AnalyzeOptions,
) -> Result<AnalyzeOutputs> {
    ensure_dir(out_dir)?;
    let stack = &ckpt.stack;
    let master = RngState::new(opts.seed).fork(streams::ANALYSIS);
    let mut files = Vec::new();
    let report = match sub {
        Subreport::Stability => {
            require_talklora(stack, "stability")?;
            let mut certs = Vec::new();
            for (idx, site) in stack.sites().iter().enumerate() {
                let tl = site.talklora().expect("talklora stack");
                let mut rng = master.fork(idx as u64);
                let certificate =
                    stability_certificate(tl, stack.config(), opts.trials, opts.delta_scale, &mut rng)?;
                certs.push(SiteCertificate {
                    layer: site.layer,
                    tag: site.tag,
                    certificate,
                });
            }
            let path = out_dir.join("stability.json");
            write_file(&path, to_json(&certs)?)?;
            files.push(path);
            serde_json::to_value(&certs)?
        }
        Subreport::Nonexpansive => {
            require_talklora(stack, "nonexpansive")?;
            let audit = nonexpansive_audit(stack);
            let mut csv = format!("{NONEXPANSIVE_SCHEMA}\nlayer,tag,sigma_max\n");
            for r in &audit.rows {
                let _ = writeln!(csv, "{},{},{:e}", r.layer, r.tag, r.sigma_max);
            }
            let path = out_dir.join("nonexpansive.csv");
            write_file(&path, csv)?;
            files.push(path);
            serde_json::to_value(&audit)?
        }
        Subreport::Routing => {
            let frozen = ckpt
                .frozen
                .as_ref()
                .ok_or_else(|| Error::config("checkpoint", "no frozen model recorded"))?;
            let data = recorded_eval_split(ckpt)?;
            let rep = routing_load(stack, frozen, &data)?;
            let mut csv = format!("{ROUTING_LOAD_SCHEMA}\nlayer,expert,mean_gate,entropy,max_share\n");
            for l in &rep.layers {
                for (e, g) in l.mean_gates.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{:e},{:e},{:e}", l.layer, e, g, l.entropy, l.max_share);
                }
            }
            let path = out_dir.join("routing_load.csv");
            write_file(&path, csv)?;
            files.push(path);
            serde_json::to_value(&rep)?
        }
        Subreport::Heatmap => {
            require_talklora(stack, "heatmap")?;
            let maps = communication_heatmap(stack);
            let mut csv = format!("{HEATMAP_SCHEMA}\nlayer,tag,row,col,value\n");
            for m in &maps {
                for i in 0..m.matrix.rows() {
                    for j in 0..m.matrix.cols() {
                        let _ = writeln!(csv, "{},{},{},{},{:e}", m.layer, m.tag, i, j, m.matrix.get(i, j));
                    }
                }
            }
            let path = out_dir.join("heatmap.csv");
            write_file(&path, csv)?;
            files.push(path);
            serde_json::to_value(&maps)?
        }
        Subreport::Degeneracy => {
            require_talklora(stack, "degeneracy")?;
            let mut out = Vec::new();
            for (idx, site) in stack.sites().iter().enumerate() {
                let tl = site.talklora().expect("talklora stack");
                let mut rng = master.fork(idx as u64);
                out.push(SiteDegeneracy {
                    layer: site.layer,
                    tag: site.tag,
                    report: degeneracy_check(tl, opts.trials.min(1000), &mut rng)?,
                });
            }
            let path = out_dir.join("degeneracy.json");
            write_file(&path, to_json(&out)?)?;
            files.push(path);
            serde_json::to_value(&out)?
        }
    };
    Ok(AnalyzeOutputs { report, files })
}

/// Small-instance gradient check settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    pub experts: usize,
    pub layers: usize,
    pub batch: usize,
    pub epsilon: f64,
    /// Standard deviation of the random parameter values.
    pub param_std: f64,
    pub lora_alpha: Option<f64>,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            d: 8,
            k: 8,
            rank: 4,
            experts: 2,
            layers: 2,
            batch: 4,
            epsilon: DEFAULT_EPSILON,
            param_std: 0.5,
            lora_alpha: None,
            loss: LossSpec::Mse,
            seed: 0,
        }
    }
}

pub const GRADCHECK_MAX_DIM: usize = 32;

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d > GRADCHECK_MAX_DIM || self.k > GRADCHECK_MAX_DIM {
            return Err(Error::config(
                "d",
                format!("gradcheck is capped at d, k <= {GRADCHECK_MAX_DIM}"),
            ));
        }
        if self.d == 0 || self.k == 0 || self.layers == 0 || self.batch == 0 {
            return Err(Error::config("d", "dimensions, layers and batch must be positive"));
        }
        if !(1e-7..=1e-3).contains(&self.epsilon) {
            return Err(Error::config("epsilon", "must lie in [1e-7, 1e-3]"));
        }
        self.adapter().validate_for(self.d, self.k)
    }

    pub fn adapter(&self) -> AdapterConfig {
        let mut cfg = AdapterConfig::new(self.rank, self.experts);
        cfg.lora_alpha = self.lora_alpha;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub method: AdapterMethod,
    pub share_b: bool,
    pub talking: bool,
    pub report: GradcheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub cases: Vec<GradcheckCase>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckSummary {
    pub fn worst_case(&self) -> Option<&GradcheckCase> {
        self.cases
            .iter()
            .max_by(|a, b| a.report.max_relative_error.total_cmp(&b.report.max_relative_error))
    }
}

/// Random frozen model, randomized stack and random batch for one case.
pub fn gradcheck_instance(
    gc: &GradcheckConfig,
    method: AdapterMethod,
    share_b: bool,
    talking: bool,
) -> Result<(FrozenModel, AdapterStack, Vec<Sample>)> {
    gc.validate()?;
    let master = RngState::new(gc.seed);
    let model = FrozenModel::random(gc.layers, gc.d, gc.k, ProjectionTag::Q, &mut master.fork(streams::FROZEN))?;
    let cfg = gc.adapter().with_share_b(share_b).with_talking(talking);
    let mut stack = build_adapter_stack(
        &model.geometry(),
        method,
        &cfg,
        &[ProjectionTag::Q],
        &master.fork(streams::ADAPTERS),
    )?;
    randomize_parameters(&mut stack, gc.param_std, &mut master.fork(streams::TRAIN));
    let mut drng = master.fork(streams::DATA);
    let batch = (0..gc.batch)
        .map(|_| Sample::new(drng.normal_vec(gc.d, 1.0), drng.normal_vec(gc.k, 1.0)))
        .collect();
    Ok((model, stack, batch))
}

/// Every family × `share_b` × talking combination.
pub fn cmd_gradcheck(gc: &GradcheckConfig) -> Result<GradcheckSummary> {
    gradcheck_suite(gc, |_, _| {})
}

/// As [`cmd_gradcheck`], with a hook that may tamper with the analytic
/// gradients of each case (negative controls).
pub fn gradcheck_suite(
    gc: &GradcheckConfig,
    mut tamper: impl FnMut(AdapterMethod, &mut GradientSet),
) -> Result<GradcheckSummary> {
    gc.validate()?;
    let mut cases = Vec::new();
    for method in AdapterMethod::ALL {
        for share_b in [true, false] {
            for talking in [true, false] {
                let (model, stack, batch) = gradcheck_instance(gc, method, share_b, talking)?;
                let report = gradcheck_with(&stack, &model, &batch, gc.loss, gc.epsilon, |g| {
                    tamper(method, g)
                })?;
                cases.push(GradcheckCase {
                    method,
                    share_b,
                    talking,
                    report,
                });
            }
        }
    }
    let max_relative_error = cases
        .iter()
        .map(|c| c.report.max_relative_error)
        .fold(0.0, f64::max);
    let passed = cases.iter().all(|c| c.report.passed);
    Ok(GradcheckSummary {
        cases,
        max_relative_error,
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundtripReport {
    pub tensors: usize,
    pub bytes: usize,
    pub bit_identical: bool,
    pub reencoded_identical: bool,
}

/// Loads a checkpoint, re-encodes it, decodes again and compares.
/// With `out`, the re-encoded file is written there.
pub fn cmd_ckpt_roundtrip(path: &Path, out: Option<&Path>) -> Result<RoundtripReport> {
    let original = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let first = decode(&original)?;
    let bytes = encode(&first)?;
    if let Some(o) = out {
        write_file(o, &bytes)?;
    }
    let second = decode(&bytes)?;
    let (header, _) = read_header(&bytes)?;
    Ok(RoundtripReport {
        tensors: header.tensors.len(),
        bytes: bytes.len(),
        bit_identical: bit_identical(&first, &second),
        reencoded_identical: bytes == original,
    })
}

/// Header of a checkpoint after full validation of every payload.
pub fn cmd_ckpt_inspect(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)?;
    Ok(read_header(&bytes)?.0)
}

/// Maps a gradcheck summary to the CLI contract (failure is numerical).
pub fn gradcheck_outcome(summary: &GradcheckSummary) -> std::result::Result<(), CliError> {
    if summary.passed {
        return Ok(());
    }
    let worst = summary.worst_case().expect("at least one case");
    Err(CliError::GradcheckFailed {
        max_relative_error: summary.max_relative_error,
        handle: worst
            .report
            .worst
            .map_or_else(|| "?".into(), |(h, k)| format!("{h}[{k}]")),
        method: worst.method,
    })
}
