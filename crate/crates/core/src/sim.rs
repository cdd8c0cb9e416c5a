//! Round orchestration: synchronous rounds over a population of nodes, one
//! peer-selection method per experiment, with metric collection.
//!
//! Every round starts from a snapshot of all models; each node's step reads
//! only that snapshot and its own state, so processing order within a round
//! cannot change any result. All randomness flows through per-purpose
//! streams keyed by (seed, label, node, round).

use rand::Rng;

use crate::bandit::{BanditState, PseudoRewardConfig};
use crate::config::{Method, SimConfig};
use crate::data::{make_base_task, partition, ClusterLayout, NodeData};
use crate::error::Error;
use crate::field::FieldParams;
use crate::groups::GroupCatalog;
use crate::learner::{AdamState, ModelParams};
use crate::rng::{shuffle, stream};
use crate::secagg::secure_aggregate;
use crate::Result;

/// What one node did and measured in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundEntry {
    pub node: usize,
    /// Catalog index of the selected group, when one was aggregated.
    pub arm: Option<u64>,
    /// The peers aggregated this round (empty when none).
    pub group: Vec<usize>,
    /// Reward credited to the selection, absent when nothing was charged.
    pub reward: Option<f64>,
    pub val_acc: f64,
    pub val_loss: f64,
    pub train_loss: f64,
    /// Size of the competitive arm set (bandit methods only).
    pub comp_set_size: Option<usize>,
    /// Entropy of the sampling distribution (bandit methods only).
    pub entropy: Option<f64>,
}

/// All node entries of one round, in node-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub entries: Vec<RoundEntry>,
}

/// Counts how often node j was in node i's selected group.
#[derive(Debug, Clone, PartialEq)]
pub struct CommMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl CommMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.k + j]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    fn add(&mut self, i: usize, j: usize) {
        self.counts[i * self.k + j] += 1;
    }
}

/// Final per-node outcome: the early-stopped model's test accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAccuracy {
    pub node: usize,
    pub cluster: usize,
    pub test_acc: f64,
    pub best_round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub comm: CommMatrix,
    pub accuracy: Vec<NodeAccuracy>,
    /// Mean test accuracy per cluster.
    pub cluster_test_acc: Vec<f64>,
    /// Unweighted mean of the per-cluster means.
    pub mean_over_clusters: f64,
    /// Mean over all nodes regardless of cluster.
    pub mean_over_nodes: f64,
}

struct Shared<'a> {
    config: &'a SimConfig,
    field: FieldParams,
    pseudo: PseudoRewardConfig,
    layout: ClusterLayout,
}

struct NodeState {
    data: NodeData,
    model: ModelParams,
    catalog: Option<GroupCatalog>,
    bandit: Option<BanditState>,
    dac_scores: Vec<Option<f64>>,
    best_val_loss: f64,
    best_round: u64,
    best_model: ModelParams,
}

struct Measured {
    reward: f64,
    val_acc: f64,
    val_loss: f64,
    train_loss: f64,
}

/// Runs the configured experiment, processing nodes in id order.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult> {
    let order: Vec<usize> = (0..config.nodes).collect();
    run_experiment_ordered(config, &order)
}

/// Runs the experiment processing nodes in the given order within each
/// round. Results are independent of the order; exposing it makes that
/// property testable.
pub fn run_experiment_ordered(config: &SimConfig, order: &[usize]) -> Result<ExperimentResult> {
    let k = config.nodes;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..k).collect::<Vec<_>>() {
        return Err(Error::Domain("processing order must be a permutation of the nodes".into()));
    }

    let layout = config.cluster_layout()?;
    layout.validate(config.data.classes)?;
    if layout.total_nodes() != k {
        return Err(Error::Config(format!(
            "layout covers {} nodes, config declares {k}",
            layout.total_nodes()
        )));
    }
    let shared = Shared {
        config,
        field: config.field_params()?,
        pseudo: config.pseudo_config()?,
        layout,
    };

    // Data, then a common initial model for every node.
    let mut data_rng = stream(config.seed, "data", 0, 0);
    let base = make_base_task(
        config.data.classes,
        config.data.dim,
        config.data.per_class,
        config.data.radius,
        config.data.sigma,
        &mut data_rng,
    )?;
    let splits = (
        config.data.split_fracs[0],
        config.data.split_fracs[1],
        config.data.split_fracs[2],
    );
    let node_data =
        partition(&base, &shared.layout, config.data.samples_per_node, splits, &mut data_rng)?;

    let mut init_rng = stream(config.seed, "init", 0, 0);
    let init = ModelParams::init(
        config.model.kind,
        config.data.dim,
        config.model.hidden,
        config.data.classes as usize,
        &mut init_rng,
    )?;

    let neighborhoods = config.neighborhoods();
    let mut states = Vec::with_capacity(k);
    for (i, data) in node_data.into_iter().enumerate() {
        let catalog = if config.method.communicates() {
            Some(GroupCatalog::new(neighborhoods[i].clone(), config.group_size)?)
        } else {
            None
        };
        let bandit = match (&catalog, config.method.uses_bandit()) {
            (Some(c), true) => Some(BanditState::new(
                c.num_arms(),
                config.group_size,
                config.bandit.importance_weighted,
            )?),
            _ => None,
        };
        states.push(NodeState {
            data,
            model: init.clone(),
            catalog,
            bandit,
            dac_scores: vec![None; k],
            best_val_loss: f64::INFINITY,
            best_round: 0,
            best_model: init.clone(),
        });
    }

    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut comm = CommMatrix::new(k);
    for t in 1..=config.rounds {
        let snapshot: Vec<ModelParams> = states.iter().map(|s| s.model.clone()).collect();
        let mut entries: Vec<Option<RoundEntry>> = (0..k).map(|_| None).collect();
        for &i in order {
            let entry = step_node(&shared, &mut states[i], &mut comm, &snapshot, i, t)?;
            entries[i] = Some(entry);
        }
        records.push(RoundRecord {
            t,
            entries: entries.into_iter().map(|e| e.expect("every node steps")).collect(),
        });
    }

    let mut accuracy = Vec::with_capacity(k);
    let num_clusters = shared.layout.num_clusters();
    let mut cluster_sum = vec![0.0; num_clusters];
    let mut cluster_n = vec![0usize; num_clusters];
    for (i, state) in states.iter().enumerate() {
        let (test_acc, _) = state.best_model.evaluate(&state.data.test)?;
        let cluster = state.data.cluster;
        cluster_sum[cluster] += test_acc;
        cluster_n[cluster] += 1;
        accuracy.push(NodeAccuracy { node: i, cluster, test_acc, best_round: state.best_round });
    }
    let cluster_test_acc: Vec<f64> =
        cluster_sum.iter().zip(&cluster_n).map(|(s, &n)| s / n as f64).collect();
    let mean_over_clusters =
        cluster_test_acc.iter().sum::<f64>() / cluster_test_acc.len() as f64;
    let mean_over_nodes = accuracy.iter().map(|a| a.test_acc).sum::<f64>() / k as f64;

    Ok(ExperimentResult {
        records,
        comm,
        accuracy,
        cluster_test_acc,
        mean_over_clusters,
        mean_over_nodes,
    })
}

fn step_node(
    shared: &Shared,
    state: &mut NodeState,
    comm: &mut CommMatrix,
    snapshot: &[ModelParams],
    i: usize,
    t: u64,
) -> Result<RoundEntry> {
    match shared.config.method {
        Method::Ppdl | Method::PpdlVar => step_bandit(shared, state, comm, snapshot, i, t),
        Method::Dac => step_dac(shared, state, comm, snapshot, i, t),
        Method::Random => {
            let catalog = state.catalog.as_ref().expect("communicating method has a catalog");
            let mut rng = stream(shared.config.seed, "select", i as u64, t);
            let arm = rng.gen_range(0..catalog.num_arms());
            let group = catalog.unrank(arm)?;
            step_aggregating(shared, state, comm, snapshot, i, t, Some(arm), group)
        }
        Method::Oracle => {
            let group = oracle_group(shared, state, i, t);
            let arm = if group.len() == shared.config.group_size {
                Some(state.catalog.as_ref().expect("oracle has a catalog").rank(&group)?)
            } else {
                None
            };
            step_aggregating(shared, state, comm, snapshot, i, t, arm, group)
        }
        Method::Local => {
            let m = train_and_measure(shared, state, i, t)?;
            Ok(RoundEntry {
                node: i,
                arm: None,
                group: Vec::new(),
                reward: Some(m.reward),
                val_acc: m.val_acc,
                val_loss: m.val_loss,
                train_loss: m.train_loss,
                comp_set_size: None,
                entropy: None,
            })
        }
    }
}

/// One bandit round: update the sampling distribution, restrict to the
/// competitive arms, sample a group, aggregate it securely, merge, train,
/// and charge the arm with the resulting validation accuracy.
fn step_bandit(
    shared: &Shared,
    state: &mut NodeState,
    comm: &mut CommMatrix,
    snapshot: &[ModelParams],
    i: usize,
    t: u64,
) -> Result<RoundEntry> {
    let catalog = state.catalog.as_ref().expect("bandit method has a catalog");
    let bandit = state.bandit.as_mut().expect("bandit method has bandit state");
    bandit.tsallis_update()?;
    let competitive: Vec<usize> = if shared.config.bandit.competitive_masking {
        bandit.competitive_set(catalog, shared.config.bandit.divisor)?
    } else {
        (0..bandit.num_arms()).collect()
    };
    let comp_set_size = competitive.len();
    let mut select_rng = stream(shared.config.seed, "select", i as u64, t);
    let arm = bandit.select_arm(&competitive, &mut select_rng)?;
    let group = catalog.unrank(arm as u64)?;
    let entropy = state.bandit.as_ref().map(|b| b.entropy());

    match aggregate_securely(shared, snapshot, i, t, &group)? {
        Some(mean) => {
            state.model.merge(&mean, shared.config.merge_weight)?;
            for &j in &group {
                comm.add(i, j);
            }
            let m = train_and_measure(shared, state, i, t)?;
            let q = shared.pseudo.q_of_t(t);
            state
                .bandit
                .as_mut()
                .expect("bandit method has bandit state")
                .record_outcome(arm, m.reward, q)?;
            Ok(RoundEntry {
                node: i,
                arm: Some(arm as u64),
                group,
                reward: Some(m.reward),
                val_acc: m.val_acc,
                val_loss: m.val_loss,
                train_loss: m.train_loss,
                comp_set_size: Some(comp_set_size),
                entropy,
            })
        }
        None => {
            // Aggregation failed: train locally, charge nothing.
            let m = train_and_measure(shared, state, i, t)?;
            Ok(RoundEntry {
                node: i,
                arm: None,
                group: Vec::new(),
                reward: None,
                val_acc: m.val_acc,
                val_loss: m.val_loss,
                train_loss: m.train_loss,
                comp_set_size: Some(comp_set_size),
                entropy,
            })
        }
    }
}

/// Shared path for the non-bandit aggregating baselines.
fn step_aggregating(
    shared: &Shared,
    state: &mut NodeState,
    comm: &mut CommMatrix,
    snapshot: &[ModelParams],
    i: usize,
    t: u64,
    arm: Option<u64>,
    group: Vec<usize>,
) -> Result<RoundEntry> {
    let aggregated = if group.len() >= 2 {
        aggregate_securely(shared, snapshot, i, t, &group)?
    } else {
        None
    };
    let (arm, group) = match aggregated {
        Some(mean) => {
            state.model.merge(&mean, shared.config.merge_weight)?;
            for &j in &group {
                comm.add(i, j);
            }
            (arm, group)
        }
        None => (None, Vec::new()),
    };
    let m = train_and_measure(shared, state, i, t)?;
    Ok(RoundEntry {
        node: i,
        arm,
        group,
        reward: Some(m.reward),
        val_acc: m.val_acc,
        val_loss: m.val_loss,
        train_loss: m.train_loss,
        comp_set_size: None,
        entropy: None,
    })
}

/// Loss-weighted softmax peer sampling with plaintext model exchange.
fn step_dac(
    shared: &Shared,
    state: &mut NodeState,
    comm: &mut CommMatrix,
    snapshot: &[ModelParams],
    i: usize,
    t: u64,
) -> Result<RoundEntry> {
    let catalog = state.catalog.as_ref().expect("dac has a catalog");
    let neigh = catalog.neighborhood().to_vec();
    let m = shared.config.group_size;

    // Scores normalized to [0,1] by the best seen; unscored peers are taken
    // optimistically at 1. With no scores yet (or tau = 0) this is uniform.
    let max_score = neigh
        .iter()
        .filter_map(|&j| state.dac_scores[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = neigh
        .iter()
        .map(|&j| {
            let normalized = match state.dac_scores[j] {
                Some(s) => s / max_score,
                None => 1.0,
            };
            (shared.config.dac_tau * normalized).exp()
        })
        .collect();

    let mut rng = stream(shared.config.seed, "select", i as u64, t);
    let mut remaining: Vec<usize> = (0..neigh.len()).collect();
    let mut group = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().map(|&idx| weights[idx]).sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (pos, &idx) in remaining.iter().enumerate() {
            acc += weights[idx];
            if target < acc {
                chosen = pos;
                break;
            }
        }
        group.push(neigh[remaining.remove(chosen)]);
    }
    group.sort_unstable();

    // Plaintext exchange: score each received model on the local train
    // split, then merge their plain mean.
    for &j in &group {
        let (_, loss) = snapshot[j].evaluate(&state.data.train)?;
        state.dac_scores[j] = Some(1.0 / (loss + 1e-12));
        comm.add(i, j);
    }
    let dim = state.model.theta.len();
    let mut mean = vec![0.0; dim];
    for &j in &group {
        for (acc, &v) in mean.iter_mut().zip(&snapshot[j].theta) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= group.len() as f64;
    }
    state.model.merge(&mean, shared.config.merge_weight)?;

    let arm = catalog.rank(&group)?;
    let measured = train_and_measure(shared, state, i, t)?;
    Ok(RoundEntry {
        node: i,
        arm: Some(arm),
        group,
        reward: Some(measured.reward),
        val_acc: measured.val_acc,
        val_loss: measured.val_loss,
        train_loss: measured.train_loss,
        comp_set_size: None,
        entropy: None,
    })
}

/// Securely aggregates the group's snapshot models for node i. Returns the
/// mean, or None when too many members dropped out.
fn aggregate_securely(
    shared: &Shared,
    snapshot: &[ModelParams],
    i: usize,
    t: u64,
    group: &[usize],
) -> Result<Option<Vec<f64>>> {
    let p = shared.config.secagg.dropout_prob;
    let dropped: Vec<bool> = if p > 0.0 {
        let mut rng = stream(shared.config.seed, "dropout", i as u64, t);
        group.iter().map(|_| rng.gen::<f64>() < p).collect()
    } else {
        vec![false; group.len()]
    };
    let refs: Vec<&[f64]> = group.iter().map(|&j| snapshot[j].theta.as_slice()).collect();
    let threshold = shared.config.secagg.threshold.min(group.len());
    let mut rng = stream(shared.config.seed, "secagg", i as u64, t);
    match secure_aggregate(i, group, &refs, &shared.field, threshold, &dropped, &mut rng) {
        Ok(agg) => Ok(Some(agg.mean)),
        Err(Error::AggregationFailure { .. }) => Ok(None),
        Err(other) => Err(other),
    }
}

/// Trains on the local split and measures the round: reward (validation
/// accuracy, by default after training), logged validation accuracy/loss,
/// and train loss. Updates the node's best-validation checkpoint.
fn train_and_measure(shared: &Shared, state: &mut NodeState, i: usize, t: u64) -> Result<Measured> {
    let pre_train_acc = if shared.config.reward_before_training {
        Some(state.model.evaluate(&state.data.val)?.0)
    } else {
        None
    };
    let mut opt = AdamState::new(state.model.theta.len(), shared.config.lr);
    let mut train_rng = stream(shared.config.seed, "train", i as u64, t);
    state.model.local_train(
        &state.data.train,
        shared.config.local_epochs,
        shared.config.batch_size,
        &mut opt,
        &mut train_rng,
    )?;
    let (_, train_loss) = state.model.evaluate(&state.data.train)?;
    let (val_acc, val_loss) = state.model.evaluate(&state.data.val)?;
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
        state.best_round = t;
        state.best_model = state.model.clone();
    }
    Ok(Measured {
        reward: pre_train_acc.unwrap_or(val_acc),
        val_acc,
        val_loss,
        train_loss,
    })
}

/// Uniform group inside the node's ground-truth cluster (all clustermates
/// when fewer than the group size exist).
fn oracle_group(shared: &Shared, state: &NodeState, i: usize, t: u64) -> Vec<usize> {
    let catalog = state.catalog.as_ref().expect("oracle has a catalog");
    let my_cluster = shared.layout.cluster_of(i);
    let mut mates: Vec<usize> = catalog
        .neighborhood()
        .iter()
        .copied()
        .filter(|&j| shared.layout.cluster_of(j) == my_cluster)
        .collect();
    if mates.len() > shared.config.group_size {
        let mut rng = stream(shared.config.seed, "select", i as u64, t);
        shuffle(&mut rng, &mut mates);
        mates.truncate(shared.config.group_size);
        mates.sort_unstable();
    }
    mates
}
