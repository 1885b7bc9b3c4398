//! The labelling campaign: grow a reference set by proposing batches for
//! human labelling, refit the passing-input density after every batch, and
//! score unseen inputs by their surprise under that density.
//!
//! Lifecycle: [`init_campaign`] fits a first model on the passing initial
//! references; then repeatedly [`CampaignState::propose_batch`], collect a
//! [`Label`] for every proposed id, and [`CampaignState::ingest_labels`],
//! which adapts `d`/`K` and refits. [`CampaignState::run_campaign`] drives
//! the loop with a [`LabelOracle`].

mod adapt;
mod config;
mod select;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use config::{CampaignConfig, DistanceSpace, Preset, Sampling};

use crate::dataset::DEFAULT_RUNS;
use crate::gmm::GmmModel;
use crate::pca::PcaProjection;
use crate::{Dataset, Error, Result, RunOutcomes, Split, VectorSet};

pub(crate) use adapt::Fitted;

/// A human or automated verdict on one proposed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Outcome(RunOutcomes),
    /// The labeller skipped the input; it returns to the pool.
    Abstain,
}

/// Supplies labels for proposed inputs.
pub trait LabelOracle {
    fn label(&mut self, id: &str) -> core::result::Result<Label, String>;
}

/// Answers from previously recorded outcomes.
#[derive(Debug, Clone)]
pub struct RecordedOracle<'a> {
    pub outcomes: &'a BTreeMap<String, RunOutcomes>,
}

impl LabelOracle for RecordedOracle<'_> {
    fn label(&mut self, id: &str) -> core::result::Result<Label, String> {
        self.outcomes.get(id).copied().map(Label::Outcome).ok_or_else(|| format!("no recorded outcome for {id:?}"))
    }
}

/// Inputs proposed for labelling in one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchProposal {
    pub batch_id: String,
    /// Highest responsibility entropy first.
    pub exploit_ids: Vec<String>,
    /// In greedy max-min pick order.
    pub explore_ids: Vec<String>,
    /// Uniformly drawn inputs (random sampling only).
    #[serde(default)]
    pub random_ids: Vec<String>,
}

impl BatchProposal {
    pub fn ids(&self) -> impl Iterator<Item = &String> + '_ {
        self.exploit_ids.iter().chain(&self.explore_ids).chain(&self.random_ids)
    }

    pub fn len(&self) -> usize {
        self.exploit_ids.len() + self.explore_ids.len() + self.random_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Surprise of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyScore {
    pub id: String,
    pub lsa: f64,
    pub log_density: f64,
    /// 1-based position when sorted by descending LSA, ties by id.
    pub rank: usize,
}

/// One entry of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: u32,
    /// Adaptation targets.
    pub k_target: usize,
    pub d_target: usize,
    /// Values actually fitted (targets clipped to what the data supports).
    pub k: usize,
    pub d: usize,
    pub cv_score: Option<f64>,
    /// Set when every cross-validation fold was skipped.
    pub cv_skipped: bool,
    /// Component perplexity of the model the `K` rule looked at.
    pub perplexity: Option<f64>,
    pub reference_size: usize,
    pub reference_pass: usize,
    pub exploit: usize,
    pub explore: usize,
    pub random: usize,
    pub abstained: usize,
}

/// Serializable campaign state without the fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub config: CampaignConfig,
    pub t: u32,
    pub reference: BTreeMap<String, RunOutcomes>,
    pub pool: BTreeSet<String>,
    pub k: usize,
    pub d: usize,
    pub cv_score: Option<f64>,
    pub history: Vec<IterationLog>,
    pub open_proposal: Option<BatchProposal>,
    pub proposal_seq: u64,
}

/// Evolving campaign: reference set `R`, pool `U`, current model and the
/// adaptation state. Mutations go through `&mut self` and are transactional:
/// a failed call leaves the state as it was.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignState {
    rec: CampaignRecord,
    model: Fitted,
}

/// Summary of one ingested batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub labelled: usize,
    pub abstained: usize,
    pub t: u32,
}

const TAG_FIT: u64 = 1;
const TAG_RANDOM: u64 = 3;

/// Starts a campaign from the dataset's initial references.
///
/// References without recorded outcomes are taken as 10/10 passes. Fewer
/// than two passing references cannot support a projection and fail with
/// [`Error::CannotBootstrap`].
pub fn init_campaign(config: CampaignConfig, data: &Dataset) -> Result<CampaignState> {
    config.validate()?;
    let mut reference = BTreeMap::new();
    for id in data.ids_in_split(Split::InitialReference) {
        let o = data.outcomes().get(id).copied().unwrap_or(RunOutcomes { runs: DEFAULT_RUNS, passes: DEFAULT_RUNS });
        o.label()?;
        reference.insert(String::from(id), o);
    }
    if reference.len() > config.target_size {
        return Err(Error::Config {
            field: "target_size",
            reason: format!("{} is below the {} initial references", config.target_size, reference.len()),
        });
    }
    let pool: BTreeSet<String> = data.ids_in_split(Split::Pool).map(String::from).collect();
    let pass = pass_ids(&reference);
    if pass.len() < 2 {
        return Err(Error::CannotBootstrap { passing: pass.len() });
    }
    let seed = crate::seed::derive(config.seed, &[0, TAG_FIT]);
    let model = adapt::fit_reference(data, &pass, config.d_init, config.k_init, seed, &config.gmm)?;
    let mut rec = CampaignRecord {
        k: config.k_init,
        d: config.d_init,
        config,
        t: 0,
        reference,
        pool,
        cv_score: None,
        history: Vec::new(),
        open_proposal: None,
        proposal_seq: 0,
    };
    rec.history.push(IterationLog {
        t: 0,
        k_target: rec.k,
        d_target: rec.d,
        k: model.gmm.k(),
        d: model.pca.dim,
        cv_score: None,
        cv_skipped: false,
        perplexity: None,
        reference_size: rec.reference.len(),
        reference_pass: pass.len(),
        exploit: 0,
        explore: 0,
        random: 0,
        abstained: 0,
    });
    Ok(CampaignState { rec, model })
}

fn pass_ids(reference: &BTreeMap<String, RunOutcomes>) -> Vec<String> {
    reference
        .iter()
        .filter(|(_, o)| o.label().map(|l| l.is_pass).unwrap_or(false))
        .map(|(id, _)| id.clone())
        .collect()
}

impl CampaignState {
    /// Reassembles a state from its record and fitted models, checking the
    /// set invariants.
    pub fn from_parts(rec: CampaignRecord, pca: PcaProjection, gmm: GmmModel) -> Result<Self> {
        rec.config.validate()?;
        if let Some(id) = rec.reference.keys().find(|id| rec.pool.contains(*id)) {
            return Err(Error::DuplicateId(id.clone()));
        }
        if gmm.dim() != pca.dim {
            return Err(Error::DimensionMismatch { expected: pca.dim, got: gmm.dim() });
        }
        Ok(CampaignState { rec, model: Fitted { pca, gmm } })
    }

    pub fn record(&self) -> &CampaignRecord {
        &self.rec
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.rec.config
    }

    pub fn t(&self) -> u32 {
        self.rec.t
    }

    pub fn reference(&self) -> &BTreeMap<String, RunOutcomes> {
        &self.rec.reference
    }

    pub fn reference_pass(&self) -> Vec<String> {
        pass_ids(&self.rec.reference)
    }

    pub fn pool(&self) -> &BTreeSet<String> {
        &self.rec.pool
    }

    pub fn pca(&self) -> &PcaProjection {
        &self.model.pca
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.model.gmm
    }

    /// Adaptation targets `(K, d)`.
    pub fn targets(&self) -> (usize, usize) {
        (self.rec.k, self.rec.d)
    }

    pub fn cv_score(&self) -> Option<f64> {
        self.rec.cv_score
    }

    pub fn history(&self) -> &[IterationLog] {
        &self.rec.history
    }

    pub fn open_proposal(&self) -> Option<&BatchProposal> {
        self.rec.open_proposal.as_ref()
    }

    /// True once the budget is spent or the pool is empty.
    pub fn is_complete(&self) -> bool {
        self.rec.reference.len() >= self.rec.config.target_size || self.rec.pool.is_empty()
    }

    /// Projects inputs into the current latent space.
    pub fn project_ids<S: AsRef<str>>(&self, data: &Dataset, ids: &[S]) -> Result<VectorSet> {
        self.model.pca.project_set(&data.gather(ids)?)
    }

    /// Responsibility entropy of every pool input under the current model.
    pub fn exploit_scores(&self, data: &Dataset) -> Result<BTreeMap<String, f64>> {
        select::exploit_scores(self, data)
    }

    /// Greedy max-min picks from the pool, excluding `already_chosen`, with
    /// distances to `R ∪ already_chosen ∪ earlier picks`.
    pub fn select_explore(&self, data: &Dataset, count: usize, already_chosen: &[String]) -> Result<Vec<String>> {
        select::select_explore(self, data, count, already_chosen)
    }

    /// Computes the next batch without registering it.
    pub fn plan_batch(&self, data: &Dataset) -> Result<BatchProposal> {
        let cfg = &self.rec.config;
        let size = self.rec.reference.len();
        if size >= cfg.target_size {
            return Err(Error::BudgetExhausted { size, target: cfg.target_size });
        }
        if self.rec.pool.is_empty() {
            return Err(Error::PoolExhausted);
        }
        let total = cfg.batch_size.min(self.rec.pool.len()).min(cfg.target_size - size);
        let batch_id = format!("t{}-p{}", self.rec.t, self.rec.proposal_seq);
        match cfg.sampling() {
            Sampling::Balanced => {
                // The epsilon keeps e.g. 0.3 * 10 from flooring to 2.
                let n_explore = ((cfg.alpha * total as f64) + 1e-9) as usize;
                let n_explore = n_explore.min(total);
                let n_exploit = total - n_explore;
                let scores = self.exploit_scores(data)?;
                let exploit_ids = select::top_by_score(&scores, n_exploit);
                let explore_ids = self.select_explore(data, n_explore, &exploit_ids)?;
                Ok(BatchProposal { batch_id, exploit_ids, explore_ids, random_ids: Vec::new() })
            }
            Sampling::Random => {
                let seed = crate::seed::derive(cfg.seed, &[u64::from(self.rec.t), TAG_RANDOM]);
                let random_ids = select::random_subset(&self.rec.pool, total, seed);
                Ok(BatchProposal { batch_id, exploit_ids: Vec::new(), explore_ids: Vec::new(), random_ids })
            }
        }
    }

    /// Computes the next batch and registers it as the open proposal,
    /// invalidating any earlier one.
    pub fn propose_batch(&mut self, data: &Dataset) -> Result<BatchProposal> {
        let proposal = self.plan_batch(data)?;
        self.rec.open_proposal = Some(proposal.clone());
        self.rec.proposal_seq += 1;
        Ok(proposal)
    }

    /// Moves labelled inputs of the open batch from `U` to `R`, then adapts
    /// and refits. `labels` must cover exactly the open batch; abstained
    /// inputs stay in the pool.
    pub fn ingest_labels(
        &mut self,
        data: &Dataset,
        batch_id: &str,
        labels: &BTreeMap<String, Label>,
    ) -> Result<IngestReport> {
        let proposal = match &self.rec.open_proposal {
            Some(p) if p.batch_id == batch_id => p,
            _ => return Err(Error::StaleBatch(batch_id.into())),
        };
        let members: BTreeSet<&String> = proposal.ids().collect();
        if let Some(id) = labels.keys().find(|id| !members.contains(id)) {
            return Err(Error::UnexpectedLabel(id.clone()));
        }
        if let Some(id) = members.iter().find(|id| !labels.contains_key(id.as_str())) {
            return Err(Error::MissingLabel((*id).clone()));
        }
        for l in labels.values() {
            if let Label::Outcome(o) = l {
                o.label()?;
            }
        }

        let mut reference = self.rec.reference.clone();
        let mut pool = self.rec.pool.clone();
        let mut abstained = 0;
        for (id, l) in labels {
            match l {
                Label::Outcome(o) => {
                    pool.remove(id);
                    reference.insert(id.clone(), *o);
                }
                Label::Abstain => abstained += 1,
            }
        }
        let labelled = labels.len() - abstained;
        let composition = (proposal.exploit_ids.len(), proposal.explore_ids.len(), proposal.random_ids.len());

        if labelled == 0 {
            self.rec.open_proposal = None;
            return Ok(IngestReport { labelled, abstained, t: self.rec.t });
        }

        let t = self.rec.t + 1;
        let outcome = adapt::adapt_and_refit(self, data, &reference, t)?;
        let pass = pass_ids(&reference);
        self.rec.history.push(IterationLog {
            t,
            k_target: outcome.k,
            d_target: outcome.d,
            k: outcome.model.gmm.k(),
            d: outcome.model.pca.dim,
            cv_score: outcome.cv_score,
            cv_skipped: outcome.cv_skipped,
            perplexity: outcome.perplexity,
            reference_size: reference.len(),
            reference_pass: pass.len(),
            exploit: composition.0,
            explore: composition.1,
            random: composition.2,
            abstained,
        });
        self.rec.reference = reference;
        self.rec.pool = pool;
        self.rec.t = t;
        self.rec.k = outcome.k;
        self.rec.d = outcome.d;
        if outcome.cv_score.is_some() {
            self.rec.cv_score = outcome.cv_score;
        }
        self.rec.open_proposal = None;
        self.model = outcome.model;
        Ok(IngestReport { labelled, abstained, t })
    }

    /// Re-runs adaptation and refitting on the current reference set
    /// without advancing `t`.
    pub fn adapt_model(&mut self, data: &Dataset) -> Result<()> {
        let reference = self.rec.reference.clone();
        let outcome = adapt::adapt_and_refit(self, data, &reference, self.rec.t)?;
        self.rec.k = outcome.k;
        self.rec.d = outcome.d;
        if outcome.cv_score.is_some() {
            self.rec.cv_score = outcome.cv_score;
        }
        self.model = outcome.model;
        Ok(())
    }

    /// One propose → label → ingest round.
    pub fn step<O: LabelOracle + ?Sized>(&mut self, data: &Dataset, oracle: &mut O) -> Result<IngestReport> {
        let proposal = self.propose_batch(data)?;
        let mut labels = BTreeMap::new();
        for id in proposal.ids() {
            let l = oracle.label(id).map_err(|reason| Error::OracleFailed { id: id.clone(), reason })?;
            labels.insert(id.clone(), l);
        }
        self.ingest_labels(data, &proposal.batch_id, &labels)
    }

    /// Loops until `|R| >= N` or the pool is empty. An oracle failure stops
    /// the loop with the state intact, so it can be resumed.
    pub fn run_campaign<O: LabelOracle + ?Sized>(&mut self, data: &Dataset, oracle: &mut O) -> Result<u32> {
        let mut iterations = 0;
        while !self.is_complete() {
            let r = self.step(data, oracle)?;
            if r.labelled == 0 {
                return Err(Error::Stalled);
            }
            iterations += 1;
        }
        Ok(iterations)
    }

    /// Surprise of the given inputs, sorted by descending LSA (ties by id).
    pub fn score_inputs<S: AsRef<str>>(&self, data: &Dataset, ids: &[S]) -> Result<Vec<AdequacyScore>> {
        let z = self.project_ids(data, ids)?;
        let log_density = self.model.gmm.log_densities(&z)?;
        let lsa: Vec<f64> = log_density.iter().map(|v| -v).collect();
        let order = crate::metrics::rank_desc(ids, &lsa);
        Ok(order
            .iter()
            .enumerate()
            .map(|(pos, &i)| AdequacyScore {
                id: String::from(ids[i].as_ref()),
                lsa: lsa[i],
                log_density: log_density[i],
                rank: pos + 1,
            })
            .collect())
    }

    /// LSA of every row of a raw vector matrix, in row order.
    pub fn score_vectors(&self, vectors: &VectorSet) -> Result<Vec<f64>> {
        let z = self.model.pca.project_set(vectors)?;
        Ok(self.model.gmm.log_densities(&z)?.into_iter().map(|v| -v).collect())
    }
}

