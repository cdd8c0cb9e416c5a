//! Correlated adversarial bandit over candidate peer groups.
//!
//! Rewards observed for one group leak information about every overlapping
//! group: if group j earned r while sharing u members with group l, then l
//! could not plausibly earn more than min(r + q/u, 1). Those pseudo-rewards
//! are accumulated per overlap count (M-1 running sums per played arm, never
//! a C x C table), and each round every arm whose pseudo-reward ceiling falls
//! below the best significant arm's empirical mean is masked out of the
//! Tsallis-INF sampling distribution.

use std::collections::HashMap;

use rand::Rng;

use crate::error::Error;
use crate::groups::{overlap, GroupCatalog};
use crate::Result;

/// Hard cap on tracked arms, to fail loudly instead of exhausting memory.
pub const MAX_TRACKED_ARMS: u64 = 1 << 24;

/// Newton solve tolerance on |sum p - 1|.
const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITERS: usize = 100;

/// Correlation strength schedule q(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    Constant,
    Exponential,
}

/// Parameters of the pseudo-reward bound min(r + q(t)/u, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoRewardConfig {
    pub mode: QMode,
    pub q0: f64,
    pub q_min: f64,
    pub horizon: u64,
}

impl PseudoRewardConfig {
    pub fn constant(q0: f64) -> Result<Self> {
        if !(q0 > 0.0 && q0.is_finite()) {
            return Err(Error::Domain("q0 must be positive and finite".into()));
        }
        Ok(Self { mode: QMode::Constant, q0, q_min: q0, horizon: 1 })
    }

    pub fn exponential(q0: f64, q_min: f64, horizon: u64) -> Result<Self> {
        if !(q0 > 0.0 && q0.is_finite()) {
            return Err(Error::Domain("q0 must be positive and finite".into()));
        }
        if !(q_min > 0.0 && q_min <= q0) {
            return Err(Error::Domain("q_min must satisfy 0 < q_min <= q0".into()));
        }
        if horizon == 0 {
            return Err(Error::Domain("schedule horizon must be at least 1".into()));
        }
        Ok(Self { mode: QMode::Exponential, q0, q_min, horizon })
    }

    /// q at round t: constant, or exponential decay from q0 to q_min over
    /// the horizon, floored at q_min afterwards.
    pub fn q_of_t(&self, t: u64) -> f64 {
        match self.mode {
            QMode::Constant => self.q0,
            QMode::Exponential => {
                let lambda = (self.q0 / self.q_min).ln() / self.horizon as f64;
                (self.q0 * (-lambda * t as f64).exp()).max(self.q_min)
            }
        }
    }
}

/// Pseudo-reward ceiling for a group overlapping the observed group in
/// `overlap_count` members. Disjoint groups learn nothing (ceiling 1).
pub fn pseudo_reward(reward: f64, q: f64, overlap_count: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::Domain(format!("reward {reward} outside [0, 1]")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("q {q} must be positive and finite")));
    }
    if overlap_count == 0 {
        return Ok(1.0);
    }
    Ok((reward + q / overlap_count as f64).min(1.0))
}

/// Per-arm bandit bookkeeping plus the Tsallis-INF sampling state.
#[derive(Debug, Clone)]
pub struct BanditState {
    group_size: usize,
    num_arms: usize,
    cum_loss: Vec<f64>,
    plays: Vec<u64>,
    reward_sum: Vec<f64>,
    // arm -> running pseudo-reward sums, one slot per overlap count 1..=M-1
    pseudo_sums: HashMap<usize, Vec<f64>>,
    dist: Vec<f64>,
    normalizer: f64,
    round: u64,
    importance_weighted: bool,
    last_arm: Option<usize>,
    last_prob: f64,
}

impl BanditState {
    pub fn new(num_arms: u64, group_size: usize, importance_weighted: bool) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::Domain("bandit needs at least one arm".into()));
        }
        if num_arms > MAX_TRACKED_ARMS {
            return Err(Error::Capacity(format!(
                "{num_arms} arms exceed the tracked-arm limit {MAX_TRACKED_ARMS}"
            )));
        }
        if group_size == 0 {
            return Err(Error::Domain("group size must be at least 1".into()));
        }
        let n = num_arms as usize;
        Ok(Self {
            group_size,
            num_arms: n,
            cum_loss: vec![0.0; n],
            plays: vec![0; n],
            reward_sum: vec![0.0; n],
            pseudo_sums: HashMap::new(),
            dist: vec![1.0 / n as f64; n],
            normalizer: 0.0,
            round: 0,
            importance_weighted,
            last_arm: None,
            last_prob: 1.0,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    /// Number of outcomes recorded so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn plays(&self) -> &[u64] {
        &self.plays
    }

    pub fn cum_loss(&self) -> &[f64] {
        &self.cum_loss
    }

    /// Normalizer x of the last Tsallis-INF solve (diagnostic).
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Shannon entropy of the sampling distribution (diagnostic).
    pub fn entropy(&self) -> f64 {
        -self.dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    pub fn empirical_mean(&self, arm: usize) -> Result<f64> {
        self.check_arm(arm)?;
        if self.plays[arm] == 0 {
            return Err(Error::State(format!("arm {arm} has never been played")));
        }
        Ok(self.reward_sum[arm] / self.plays[arm] as f64)
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.num_arms {
            return Err(Error::Index { index: arm as u64, limit: self.num_arms as u64 });
        }
        Ok(())
    }

    /// Folds one observed (arm, reward) pair into the statistics, using the
    /// round's correlation strength q for the pseudo-reward sums.
    pub fn record_outcome(&mut self, arm: usize, reward: f64, q: f64) -> Result<()> {
        self.check_arm(arm)?;
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::Domain(format!("reward {reward} outside [0, 1]")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Domain(format!("q {q} must be positive and finite")));
        }
        let loss = if self.importance_weighted {
            if self.last_arm != Some(arm) {
                return Err(Error::State(
                    "importance weighting requires recording the arm sampled last".into(),
                ));
            }
            (1.0 - reward) / self.last_prob
        } else {
            1.0 - reward
        };
        self.cum_loss[arm] += loss;
        self.reward_sum[arm] += reward;
        self.plays[arm] += 1;
        let buckets =
            self.pseudo_sums.entry(arm).or_insert_with(|| vec![0.0; self.group_size - 1]);
        for u in 1..self.group_size {
            buckets[u - 1] += pseudo_reward(reward, q, u)?;
        }
        self.round += 1;
        Ok(())
    }

    /// Mean pseudo-reward of `target` as bounded by observations of
    /// `source`: the target's own mean when they coincide, 1 when disjoint,
    /// otherwise the overlap bucket's running mean.
    pub fn empirical_pseudo_reward(
        &self,
        catalog: &GroupCatalog,
        target: usize,
        source: usize,
    ) -> Result<f64> {
        self.check_arm(target)?;
        self.check_arm(source)?;
        if self.plays[source] == 0 {
            return Err(Error::State(format!("source arm {source} has never been played")));
        }
        if target == source {
            return self.empirical_mean(source);
        }
        let u = overlap(&catalog.unrank(target as u64)?, &catalog.unrank(source as u64)?);
        if u == 0 {
            return Ok(1.0);
        }
        Ok(self.pseudo_sums[&source][u - 1] / self.plays[source] as f64)
    }

    /// Recomputes the sampling distribution p_j = 4 (eta (l_j - x))^-2 with
    /// eta = 2/sqrt(t), solving for the normalizer x by Newton's method.
    pub fn tsallis_update(&mut self) -> Result<&[f64]> {
        let t = self.round + 1;
        let eta = 2.0 / (t as f64).sqrt();
        let min_loss = self.cum_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        // p_j <= 1 needs eta (l_j - x) >= 2; the solution always lies at or
        // below this bound, so it also serves as a safeguard for overshoots.
        let bound = min_loss - 2.0 / eta;
        let mut x = self.normalizer.min(bound);
        for _ in 0..NEWTON_MAX_ITERS {
            let mut sum = 0.0;
            let mut sum_pow = 0.0;
            for (p, &l) in self.dist.iter_mut().zip(&self.cum_loss) {
                let g = eta * (l - x);
                *p = 4.0 / (g * g);
                sum += *p;
                sum_pow += p.powf(1.5);
            }
            if (sum - 1.0).abs() <= NEWTON_TOL {
                self.normalizer = x;
                return Ok(&self.dist);
            }
            x = (x - (sum - 1.0) / (eta * sum_pow)).min(bound);
        }
        Err(Error::Numerical(format!(
            "Tsallis-INF normalizer did not converge at t={t} (min loss {min_loss:.6})"
        )))
    }

    /// Arms that survive the competitive filter, in ascending order.
    ///
    /// Significant arms are those with plays * divisor > round. The best of
    /// them by empirical mean (ties to the lowest index) is always kept; any
    /// other arm is kept iff no significant arm's observations bound its
    /// pseudo-reward below that best mean. An empty significant set keeps
    /// every arm.
    pub fn competitive_set(&self, catalog: &GroupCatalog, divisor: u64) -> Result<Vec<usize>> {
        if divisor == 0 {
            return Err(Error::Domain("significant-set divisor must be positive".into()));
        }
        if catalog.num_arms() != self.num_arms as u64 {
            return Err(Error::Domain(format!(
                "catalog has {} arms, bandit tracks {}",
                catalog.num_arms(),
                self.num_arms
            )));
        }
        let significant: Vec<usize> = (0..self.num_arms)
            .filter(|&j| self.plays[j] as u128 * divisor as u128 > self.round as u128)
            .collect();
        if significant.is_empty() {
            return Ok((0..self.num_arms).collect());
        }
        let mut best = significant[0];
        for &l in &significant[1..] {
            if self.empirical_mean(l)? > self.empirical_mean(best)? {
                best = l;
            }
        }
        let best_mean = self.empirical_mean(best)?;
        let sig_members: Vec<(usize, Vec<usize>)> = significant
            .iter()
            .map(|&l| Ok((l, catalog.unrank(l as u64)?)))
            .collect::<Result<_>>()?;
        let mut kept = Vec::new();
        for j in 0..self.num_arms {
            if j == best {
                kept.push(j);
                continue;
            }
            let members_j = catalog.unrank(j as u64)?;
            let mut floor = f64::INFINITY;
            for (l, members_l) in &sig_members {
                if *l == j {
                    continue;
                }
                let u = overlap(&members_j, members_l);
                let phi = if u == 0 {
                    1.0
                } else {
                    self.pseudo_sums[l][u - 1] / self.plays[*l] as f64
                };
                floor = floor.min(phi);
            }
            if floor >= best_mean {
                kept.push(j);
            }
        }
        Ok(kept)
    }

    /// Samples an arm from the sampling distribution restricted to the given
    /// competitive arms (renormalized).
    pub fn select_arm<R: Rng>(&mut self, competitive: &[usize], rng: &mut R) -> Result<usize> {
        if competitive.is_empty() {
            return Err(Error::Domain("competitive set must not be empty".into()));
        }
        let mut total = 0.0;
        for &j in competitive {
            self.check_arm(j)?;
            total += self.dist[j];
        }
        if !(total > 0.0) {
            return Err(Error::Numerical("competitive arms carry no probability mass".into()));
        }
        let target: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = competitive[competitive.len() - 1];
        for &j in competitive {
            acc += self.dist[j];
            if target < acc {
                chosen = j;
                break;
            }
        }
        self.last_arm = Some(chosen);
        self.last_prob = self.dist[chosen] / total;
        Ok(chosen)
    }
}
