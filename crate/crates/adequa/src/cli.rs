//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use adequa_core::baseline::{self, high_failure_mask, quartile_overlap, BaselineKind};
use adequa_core::campaign::{init_campaign, CampaignConfig, CampaignState, Label, LabelOracle, Preset};
use adequa_core::metrics::transfer_eval;
use adequa_core::synth::{generate_world, SimulatedOracle};
use adequa_core::{fit_mdsa, fit_pca, Dataset, Split};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CHECKPOINT_FILE};
use crate::config::{load_world_spec, FileConfig};
use crate::error::{read_to_string, write_atomic, Error, Result};
use crate::labels::{read_labels, read_pass_rates, read_truth, TRUTH_FILE};
use crate::manifest::{content_lines, load_dataset, parse_line, save_dataset};
use crate::{clh, report, service};

#[derive(Debug, Parser)]
#[command(name = "adequa", version, about = "Hidden-state test adequacy: sample, label, model, rank")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for every randomised step; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Labelling campaign lifecycle.
    #[command(subcommand)]
    Campaign(CampaignCmd),
    /// LSA of every row of a matrix file.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        /// Order rows by descending LSA instead of row order.
        #[arg(long)]
        sorted: bool,
    },
    /// Inputs ordered by descending LSA.
    Rank {
        #[arg(long)]
        model: PathBuf,
        /// Manifest; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rank every input rather than only the unlabelled pool.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Metric report for a score file against a label file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// failure@N cutoffs.
        #[arg(long, value_delimiter = ',')]
        at: Option<Vec<usize>>,
    },
    /// Comparison scores.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Generate a synthetic world.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Serve the campaign in `--out` over HTTP.
    Serve {
        /// Manifest used to initialise a campaign when `--out` has none.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        token: Option<String>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct LabelSource {
    /// `simulated` to draw from the world's ground truth, or a label file.
    #[arg(long, default_value = "simulated")]
    pub labels: String,
    /// Ground-truth file for simulated labels; defaults to truth.json next
    /// to the manifest.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CampaignCmd {
    /// Fit the initial model and write a checkpoint into `--out`.
    Init {
        #[arg(long)]
        data: PathBuf,
    },
    /// One propose, label, ingest round.
    Step {
        #[command(flatten)]
        source: LabelSource,
    },
    /// Rounds until the budget is spent, checkpointing after each.
    Run {
        /// Manifest; initialises a new campaign when `--out` has none.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        source: LabelSource,
    },
    /// Summary and iteration history of the checkpoint in `--out`
    Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PostMetric {
    TokProb,
    TokEnt,
    SemEnt,
    LohsVar,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCmd {
    /// Mean input token log-probability.
    Sll {
        #[arg(long)]
        data: PathBuf,
    },
    /// Mahalanobis distance to the passing initial references.
    Mdsa {
        #[arg(long)]
        data: PathBuf,
        /// Projection dimensionality; defaults to the campaign's d_init.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Random-sampling campaign with K and d pinned.
    GmmBase {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        source: LabelSource,
    },
    /// Post-generation scores from the manifest's generation dump.
    Post {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        metric: PostMetric,
    },
    /// Which metrics flag the high-failure inputs in their top quantile.
    Overlap {
        /// Score files; repeat for each metric.
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        top: f64,
        #[arg(long, default_value_t = baseline::HIGH_FAILURE_MAX_PASS_RATE)]
        max_pass_rate: f64,
    },
}

/// One line of a score file. `score` is failure-oriented: higher means more
/// likely to fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let s: ScoreLine = parse_line(path, line, l)?;
        if !s.score.is_finite() {
            return Err(Error::Line { path: path.to_owned(), line, msg: "score is not finite".into() });
        }
        out.push((s.id, s.score));
    }
    Ok(out)
}

fn write_scores(lines: &[ScoreLine], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("plain data"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

struct Ctx<'a> {
    global: Global,
    config: FileConfig,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn out_dir(&self) -> Result<&Path> {
        self.global.out.as_deref().ok_or_else(|| Error::Usage("--out <dir> is required".into()))
    }

    fn seed(&self) -> u64 {
        self.global.seed.or(self.config.seed).unwrap_or(0)
    }

    fn campaign_config(&self) -> CampaignConfig {
        let mut c = self.config.campaign.clone();
        if let Some(s) = self.global.seed.or(self.config.seed) {
            c.seed = s;
        }
        c
    }

    fn say(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes()).map_err(|e| Error::io(Path::new("<stdout>"), e))
    }
}

/// Labels from a file, for inputs labelled offline.
struct FileOracle(BTreeMap<String, Label>);

impl LabelOracle for FileOracle {
    fn label(&mut self, id: &str) -> std::result::Result<Label, String> {
        self.0.get(id).cloned().ok_or_else(|| "no label in file".to_string())
    }
}

enum Source {
    Simulated(adequa_core::synth::GroundTruth, u32),
    File(FileOracle),
}

impl Source {
    fn open(src: &LabelSource, manifest: Option<&Path>, runs: u32) -> Result<Self> {
        if src.labels == "simulated" {
            let path = match (&src.truth, manifest) {
                (Some(t), _) => t.clone(),
                (None, Some(m)) => m.parent().unwrap_or(Path::new(".")).join(TRUTH_FILE),
                (None, None) => return Err(Error::Usage("simulated labels need --truth".into())),
            };
            Ok(Source::Simulated(read_truth(&path)?, runs))
        } else {
            Ok(Source::File(FileOracle(read_labels(Path::new(&src.labels))?)))
        }
    }

    fn step(&mut self, st: &mut CampaignState, data: &Dataset) -> adequa_core::Result<usize> {
        let r = match self {
            Source::Simulated(truth, runs) => st.step(data, &mut SimulatedOracle { truth, runs: *runs })?,
            Source::File(f) => st.step(data, f)?,
        };
        Ok(r.labelled)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

fn open_campaign(dir: &Path) -> Result<(CampaignState, Option<PathBuf>, Dataset)> {
    let ck = checkpoint::load(dir)?;
    let manifest = ck.dataset.clone();
    let Some(m) = manifest.clone() else {
        return Err(Error::format(&dir.join(CHECKPOINT_FILE), "checkpoint names no dataset"));
    };
    let data = load_dataset(&m)?;
    Ok((ck.into_state()?, manifest, data))
}

fn init_into(ctx: &mut Ctx, manifest: &Path, cfg: CampaignConfig) -> Result<(CampaignState, PathBuf, Dataset)> {
    let dir = ctx.out_dir()?.to_owned();
    let manifest = absolute(manifest)?;
    let data = load_dataset(&manifest)?;
    let st = init_campaign(cfg, &data)?;
    checkpoint::save(&st, Some(&manifest), &dir.join(CHECKPOINT_FILE))?;
    Ok((st, manifest, data))
}

fn pool_scores(st: &CampaignState, data: &Dataset, all: bool) -> Result<Vec<ScoreLine>> {
    let ids: Vec<&str> = if all {
        data.records().iter().map(|r| r.id.as_str()).collect()
    } else {
        st.pool().iter().map(String::as_str).collect()
    };
    Ok(st
        .score_inputs(data, &ids)?
        .into_iter()
        .map(|s| ScoreLine { id: s.id, score: s.lsa, value: Some(s.log_density), rank: Some(s.rank) })
        .collect())
}

fn run_campaign(ctx: &mut Ctx, data_arg: Option<&Path>, source: &LabelSource, cfg: CampaignConfig) -> Result<()> {
    let dir = ctx.out_dir()?.to_owned();
    let existing = dir.join(CHECKPOINT_FILE).exists();
    let (mut st, manifest, data) = match (existing, data_arg) {
        (true, _) => open_campaign(&dir)?,
        (false, Some(m)) => {
            let (st, m, d) = init_into(ctx, m, cfg)?;
            (st, Some(m), d)
        }
        (false, None) => return Err(Error::Usage("no checkpoint in --out; pass --data to start one".into())),
    };
    let mut src = Source::open(source, manifest.as_deref(), st.config().runs_per_label)?;
    while !st.is_complete() {
        let labelled = src.step(&mut st, &data)?;
        checkpoint::save(&st, manifest.as_deref(), &dir.join(CHECKPOINT_FILE))?;
        if labelled == 0 {
            return Err(adequa_core::Error::Stalled.into());
        }
    }
    write_scores(&pool_scores(&st, &data, false)?, &dir.join("ranking.jsonl"))?;
    let text = report::status_text(&st);
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    ctx.say(&text)
}

fn campaign(ctx: &mut Ctx, cmd: CampaignCmd) -> Result<()> {
    match cmd {
        CampaignCmd::Init { data } => {
            let cfg = ctx.campaign_config();
            let (st, _, _) = init_into(ctx, &data, cfg)?;
            ctx.say(&report::status_text(&st))
        }
        CampaignCmd::Step { source } => {
            let dir = ctx.out_dir()?.to_owned();
            let (mut st, manifest, data) = open_campaign(&dir)?;
            let mut src = Source::open(&source, manifest.as_deref(), st.config().runs_per_label)?;
            src.step(&mut st, &data)?;
            checkpoint::save(&st, manifest.as_deref(), &dir.join(CHECKPOINT_FILE))?;
            ctx.say(&report::status_text(&st))
        }
        CampaignCmd::Run { data, source } => {
            let cfg = ctx.campaign_config();
            run_campaign(ctx, data.as_deref(), &source, cfg)
        }
        CampaignCmd::Status => {
            let dir = ctx.out_dir()?.to_owned();
            let st = checkpoint::load(&dir)?.into_state()?;
            ctx.say(&report::status_text(&st))
        }
    }
}

fn emit_scores(ctx: &mut Ctx, lines: &[ScoreLine], file: &str) -> Result<()> {
    if let Some(dir) = ctx.global.out.clone() {
        write_scores(lines, &dir.join(file))?;
    }
    let mut text = String::new();
    for l in lines {
        text.push_str(&format!("{}\t{}\n", l.id, l.score));
    }
    ctx.say(&text)
}

fn oriented(kind: BaselineKind, pairs: Vec<(String, f64)>) -> Vec<ScoreLine> {
    pairs
        .into_iter()
        .map(|(id, v)| ScoreLine { id, score: kind.orientation() * v, value: Some(v), rank: None })
        .collect()
}

fn baseline_cmd(ctx: &mut Ctx, cmd: BaselineCmd) -> Result<()> {
    match cmd {
        BaselineCmd::Sll { data } => {
            let data = load_dataset(&data)?;
            let mut pairs = Vec::new();
            for (id, lp) in &data.aux().input_logprobs {
                pairs.push((id.clone(), baseline::sll(lp)?));
            }
            emit_scores(ctx, &oriented(BaselineKind::Sll, pairs), "baseline_sll.jsonl")
        }
        BaselineCmd::Mdsa { data, dim } => {
            let data = load_dataset(&data)?;
            let reference: Vec<&str> = data
                .outcomes()
                .iter()
                .filter(|(_, o)| o.label().is_ok_and(|l| l.is_pass))
                .map(|(id, _)| id.as_str())
                .collect();
            let x = data.gather(&reference)?;
            let d = dim.unwrap_or(ctx.config.campaign.d_init).min(x.rows().saturating_sub(1)).max(1);
            let pca = fit_pca(&x, d)?;
            let model = fit_mdsa(&pca.project_set(&x)?)?;
            let ids: Vec<&str> = data.ids_in_split(Split::Pool).collect();
            let dist = model.distances(&pca.project_set(&data.gather(&ids)?)?)?;
            let pairs = ids.iter().map(|s| s.to_string()).zip(dist).collect();
            emit_scores(ctx, &oriented(BaselineKind::Mdsa, pairs), "baseline_mdsa.jsonl")
        }
        BaselineCmd::GmmBase { data, source } => {
            let mut cfg = ctx.campaign_config();
            cfg.preset = Preset::GmmBase;
            cfg.sampling = None;
            run_campaign(ctx, Some(&data), &source, cfg)
        }
        BaselineCmd::Post { data, metric } => {
            let data = load_dataset(&data)?;
            let Some(dump) = &data.aux().generations else {
                return Err(Error::Usage("the manifest references no generation dump".into()));
            };
            let (kind, file) = match metric {
                PostMetric::TokProb => (BaselineKind::TokProb, "baseline_tok_prob.jsonl"),
                PostMetric::TokEnt => (BaselineKind::TokEnt, "baseline_tok_ent.jsonl"),
                PostMetric::SemEnt => (BaselineKind::SemEnt, "baseline_sem_ent.jsonl"),
                PostMetric::LohsVar => (BaselineKind::LohsVar, "baseline_lohs_var.jsonl"),
            };
            let mut pairs = Vec::new();
            for (id, gens) in &dump.inputs {
                let s = baseline::post_generation_scores(gens)?;
                let v = match metric {
                    PostMetric::TokProb => Some(s.tok_prob),
                    PostMetric::TokEnt => Some(s.tok_ent),
                    PostMetric::SemEnt => s.sem_ent,
                    PostMetric::LohsVar => s.lohs_var,
                };
                match v {
                    Some(v) => pairs.push((id.clone(), v)),
                    None => return Err(Error::Usage(format!("input {id:?} lacks data for {}", kind.name()))),
                }
            }
            emit_scores(ctx, &oriented(kind, pairs), file)
        }
        BaselineCmd::Overlap { scores, labels, top, max_pass_rate } => {
            let rates = read_pass_rates(&labels)?;
            let mut files = Vec::new();
            for path in &scores {
                let s: BTreeMap<String, f64> = read_scores(path)?.into_iter().collect();
                let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
                files.push((name, s));
            }
            // Only inputs that are labelled and scored by every metric take part.
            let ids: Vec<&String> = rates.keys().filter(|id| files.iter().all(|(_, s)| s.contains_key(*id))).collect();
            let sets: Vec<(String, Vec<f64>)> =
                files.iter().map(|(n, s)| (n.clone(), ids.iter().map(|id| s[*id]).collect())).collect();
            let rate_list: Vec<f64> = ids.iter().map(|id| rates[*id]).collect();
            let o = quartile_overlap(&sets, &high_failure_mask(&rate_list, max_pass_rate), top)?;
            let json = serde_json::to_string_pretty(&o).expect("plain data");
            if let Some(dir) = ctx.global.out.clone() {
                write_atomic(&dir.join("overlap.json"), json.as_bytes())?;
            }
            let mut text = format!("compared inputs {}\nhigh-failure inputs {}\n", ids.len(), o.high_failure);
            for (n, f) in o.names.iter().zip(&o.flagged) {
                text.push_str(&format!("{n}\t{f}\n"));
            }
            text.push_str(&format!("union\t{}\n", o.union()));
            ctx.say(&text)
        }
    }
}

fn dispatch(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Campaign(cmd) => campaign(ctx, cmd),
        Command::Score { model, vectors, sorted } => {
            let st = checkpoint::load(&model)?.into_state()?;
            let x = clh::read_matrix(&vectors)?;
            let lsa = st.score_vectors(&x)?;
            let mut order: Vec<usize> = (0..lsa.len()).collect();
            if sorted {
                order.sort_by(|&a, &b| lsa[b].total_cmp(&lsa[a]).then(a.cmp(&b)));
            }
            let lines: Vec<ScoreLine> = order
                .iter()
                .map(|&i| ScoreLine { id: i.to_string(), score: lsa[i], value: None, rank: None })
                .collect();
            emit_scores(ctx, &lines, "scores.jsonl")
        }
        Command::Rank { model, data, all, limit } => {
            let ck = checkpoint::load(&model)?;
            let manifest = data.or_else(|| ck.dataset.clone()).ok_or_else(|| {
                Error::Usage("the checkpoint names no dataset; pass --data".into())
            })?;
            let data = load_dataset(&manifest)?;
            let st = ck.into_state()?;
            let mut lines = pool_scores(&st, &data, all)?;
            lines.truncate(limit.unwrap_or(usize::MAX));
            emit_scores(ctx, &lines, "ranking.jsonl")
        }
        Command::Eval { scores, labels, at } => {
            let scores = read_scores(&scores)?;
            let rates: Vec<(String, f64)> = read_pass_rates(&labels)?.into_iter().collect();
            let cutoffs = at.unwrap_or_else(|| ctx.config.eval.cutoffs.clone());
            let r = transfer_eval(&scores, &rates, &cutoffs)?;
            let text = report::eval_text(&r);
            if let Some(dir) = ctx.global.out.clone() {
                write_atomic(&dir.join("eval.json"), serde_json::to_string_pretty(&r).expect("plain data").as_bytes())?;
                write_atomic(&dir.join("eval.txt"), text.as_bytes())?;
            }
            ctx.say(&text)
        }
        Command::Baseline(cmd) => baseline_cmd(ctx, cmd),
        Command::Synth { spec } => {
            let dir = ctx.out_dir()?.to_owned();
            let spec = load_world_spec(&spec)?;
            let w = generate_world(&spec, ctx.seed())?;
            let manifest = save_dataset(&w.dataset, &dir)?;
            crate::labels::write_truth(&w.truth, &dir.join(TRUTH_FILE))?;
            let refs = w.dataset.ids_in_split(Split::InitialReference).count();
            ctx.say(&format!(
                "{} inputs ({refs} initial references) in {}\n",
                w.dataset.records().len(),
                manifest.display()
            ))
        }
        Command::Serve { data, addr, token } => {
            let dir = ctx.out_dir()?.to_owned();
            let (st, manifest, data) = if dir.join(CHECKPOINT_FILE).exists() {
                open_campaign(&dir)?
            } else if let Some(m) = data {
                let cfg = ctx.campaign_config();
                let (st, m, d) = init_into(ctx, &m, cfg)?;
                (st, Some(m), d)
            } else {
                return Err(Error::Usage("no checkpoint in --out; pass --data to start one".into()));
            };
            let addr = addr.unwrap_or_else(|| ctx.config.service.addr.clone());
            let token = token.or_else(|| ctx.config.service.token.clone());
            let session = service::Session::new(data, st, dir.join(CHECKPOINT_FILE), manifest, token);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("<runtime>"), e))?;
            rt.block_on(async {
                let listener =
                    tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::io(Path::new(&addr), e))?;
                let local = listener.local_addr().map_err(|e| Error::io(Path::new(&addr), e))?;
                ctx.say(&format!("listening on http://{local}\n"))?;
                ctx.out.flush().ok();
                service::serve(session, listener).await.map_err(|e| Error::io(Path::new(&addr), e))
            })
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let config = match &cli.global.config {
        Some(p) => match FileConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return e.exit_code();
            }
        },
        None => FileConfig::default(),
    };
    let mut ctx = Ctx { global: cli.global, config, out };
    match dispatch(&mut ctx, cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
