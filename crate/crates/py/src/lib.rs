//! Python bindings for the core simulator: group combinatorics, the
//! adversarial bandit, secret sharing, secure aggregation, and whole
//! experiment runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppdl_core::bandit::{BanditState as CoreBanditState, PseudoRewardConfig};
use ppdl_core::config::{parse_config_str, ConfigFormat};
use ppdl_core::field::FieldParams;
use ppdl_core::groups::{self, GroupCatalog as CoreGroupCatalog};
use ppdl_core::report::summary_of;
use ppdl_core::secagg::secure_aggregate;
use ppdl_core::shamir::{self, ShamirShare};
use ppdl_core::sim::run_experiment;

fn err(e: ppdl_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Number of size-m groups in a neighborhood of the given size.
#[pyfunction]
fn count_groups(neighborhood_size: usize, group_size: usize) -> PyResult<u64> {
    groups::count_groups(neighborhood_size, group_size).map_err(err)
}

/// Number of size-m groups sharing exactly u members with a fixed group.
#[pyfunction]
fn overlap_class_count(n: usize, m: usize, u: usize) -> PyResult<u64> {
    groups::overlap_class_count(n, m, u).map_err(err)
}

/// Ranked catalog of all size-m subsets of one node's neighborhood.
#[pyclass]
struct GroupCatalog {
    inner: CoreGroupCatalog,
}

#[pymethods]
impl GroupCatalog {
    #[new]
    fn new(neighborhood: Vec<usize>, group_size: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreGroupCatalog::new(neighborhood, group_size).map_err(err)? })
    }

    fn num_arms(&self) -> u64 {
        self.inner.num_arms()
    }

    fn group_size(&self) -> usize {
        self.inner.group_size()
    }

    fn neighborhood(&self) -> Vec<usize> {
        self.inner.neighborhood().to_vec()
    }

    fn unrank(&self, arm: u64) -> PyResult<Vec<usize>> {
        self.inner.unrank(arm).map_err(err)
    }

    fn rank(&self, members: Vec<usize>) -> PyResult<u64> {
        self.inner.rank(&members).map_err(err)
    }
}

/// Pseudo-reward level as a function of the round.
#[pyclass]
struct PseudoRewardSchedule {
    inner: PseudoRewardConfig,
}

#[pymethods]
impl PseudoRewardSchedule {
    #[staticmethod]
    fn constant(q0: f64) -> PyResult<Self> {
        Ok(Self { inner: PseudoRewardConfig::constant(q0).map_err(err)? })
    }

    #[staticmethod]
    fn exponential(q0: f64, q_min: f64, horizon: u64) -> PyResult<Self> {
        Ok(Self { inner: PseudoRewardConfig::exponential(q0, q_min, horizon).map_err(err)? })
    }

    fn q_of_t(&self, t: u64) -> f64 {
        self.inner.q_of_t(t)
    }
}

/// Correlated adversarial bandit over a group catalog, with its own seeded
/// randomness for arm sampling.
#[pyclass]
struct BanditState {
    inner: CoreBanditState,
    rng: ChaCha8Rng,
}

#[pymethods]
impl BanditState {
    #[new]
    #[pyo3(signature = (num_arms, group_size, seed, importance_weighted = false))]
    fn new(num_arms: u64, group_size: usize, seed: u64, importance_weighted: bool) -> PyResult<Self> {
        Ok(Self {
            inner: CoreBanditState::new(num_arms, group_size, importance_weighted).map_err(err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn tsallis_update(&mut self) -> PyResult<()> {
        self.inner.tsallis_update().map_err(err)
    }

    fn competitive_set(&self, catalog: &GroupCatalog, divisor: u64) -> PyResult<Vec<usize>> {
        self.inner.competitive_set(&catalog.inner, divisor).map_err(err)
    }

    fn select_arm(&mut self, competitive: Vec<usize>) -> PyResult<usize> {
        self.inner.select_arm(&competitive, &mut self.rng).map_err(err)
    }

    fn record_outcome(&mut self, arm: usize, reward: f64, q: f64) -> PyResult<()> {
        self.inner.record_outcome(arm, reward, q).map_err(err)
    }

    fn num_arms(&self) -> usize {
        self.inner.num_arms()
    }

    fn round(&self) -> u64 {
        self.inner.round()
    }

    fn dist(&self) -> Vec<f64> {
        self.inner.dist().to_vec()
    }

    fn plays(&self) -> Vec<u64> {
        self.inner.plays().to_vec()
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn empirical_mean(&self, arm: usize) -> PyResult<f64> {
        self.inner.empirical_mean(arm).map_err(err)
    }
}

/// Splits a secret vector into n shares with reconstruction threshold t
/// over the default prime field. Returns (point, values) pairs.
#[pyfunction]
fn share_secret(secret: Vec<u64>, n: usize, t: usize, seed: u64) -> PyResult<Vec<(u64, Vec<u64>)>> {
    let field = default_field()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shares = shamir::share_secret(&field, &secret, n, t, &mut rng).map_err(err)?;
    Ok(shares.into_iter().map(|s| (s.point, s.values)).collect())
}

/// Recovers the secret vector from at least t shares.
#[pyfunction]
fn reconstruct(shares: Vec<(u64, Vec<u64>)>, t: usize) -> PyResult<Vec<u64>> {
    let field = default_field()?;
    let shares: Vec<ShamirShare> = shares
        .into_iter()
        .map(|(point, values)| ShamirShare { point, values })
        .collect();
    shamir::reconstruct(&field, &shares, t).map_err(err)
}

/// Runs one masked-aggregation round over the given model vectors and
/// returns (mean, included member indices). Members are 0..len(models);
/// member 0 aggregates.
#[pyfunction]
#[pyo3(signature = (models, threshold, seed, dropped = None))]
fn secure_aggregate_mean(
    models: Vec<Vec<f64>>,
    threshold: usize,
    seed: u64,
    dropped: Option<Vec<bool>>,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let field = default_field()?;
    let group: Vec<usize> = (0..models.len()).collect();
    let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
    let dropped = dropped.unwrap_or_else(|| vec![false; models.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agg =
        secure_aggregate(0, &group, &refs, &field, threshold, &dropped, &mut rng).map_err(err)?;
    Ok((agg.mean, agg.included))
}

/// Parses a config (format "toml" or "json"), runs the experiment, and
/// returns a JSON string with the summary, communication matrix, and
/// per-node accuracies.
#[pyfunction]
#[pyo3(signature = (config_text, format = "toml"))]
fn run_experiment_json(config_text: &str, format: &str) -> PyResult<String> {
    let format = match format {
        "toml" => ConfigFormat::Toml,
        "json" => ConfigFormat::Json,
        other => return Err(PyValueError::new_err(format!("unknown config format {other:?}"))),
    };
    let (config, _) = parse_config_str(config_text, format).map_err(err)?;
    let result = run_experiment(&config).map_err(err)?;
    let summary = summary_of(&config, &result).map_err(err)?;
    let k = result.comm.k();
    let comm: Vec<Vec<u64>> =
        (0..k).map(|i| (0..k).map(|j| result.comm.count(i, j)).collect()).collect();
    let accuracy: Vec<serde_json::Value> = result
        .accuracy
        .iter()
        .map(|a| {
            serde_json::json!({
                "node": a.node,
                "cluster": a.cluster,
                "test_acc": a.test_acc,
                "best_round": a.best_round,
            })
        })
        .collect();
    let out = serde_json::json!({
        "summary": summary,
        "comm_matrix": comm,
        "accuracy": accuracy,
    });
    Ok(out.to_string())
}

fn default_field() -> PyResult<FieldParams> {
    FieldParams::new(
        ppdl_core::field::DEFAULT_PRIME,
        ppdl_core::field::DEFAULT_FRAC_BITS,
        ppdl_core::field::DEFAULT_CLIP,
    )
    .map_err(err)
}

#[pymodule]
fn ppdl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_groups, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_class_count, m)?)?;
    m.add_function(wrap_pyfunction!(share_secret, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(secure_aggregate_mean, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    m.add_class::<GroupCatalog>()?;
    m.add_class::<PseudoRewardSchedule>()?;
    m.add_class::<BanditState>()?;
    Ok(())
}
