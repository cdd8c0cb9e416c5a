//! Masked secure aggregation for one group query.
//!
//! Each member quantizes its parameters into the prime field, hides them
//! under a uniform one-time mask, and secret-shares the mask across the
//! group. The aggregator sums the masked uploads, reconstructs only the
//! *sum* of masks from the members' aggregated shares, and unmasks. No
//! individual parameter vector ever crosses a node boundary in the clear,
//! and the transcript keeps every cross-boundary payload so tests can
//! audit exactly that.
//!
//! Dropouts are simulated at the phase boundary: a dropped member has
//! already distributed its mask shares but never uploads, so its mask is
//! simply left out of the aggregate-share sums. Fewer surviving members
//! than the reconstruction threshold fails the whole aggregation.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::field::FieldParams;
use crate::shamir::{reconstruct, share_secret, ShamirShare};
use crate::Result;

/// Kind of a cross-boundary protocol message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// One Shamir share of a member's mask, member to member.
    MaskShare,
    /// Masked quantized parameters, member to aggregator.
    MaskedUpload,
    /// Sum of the shares a member holds for surviving masks, member to
    /// aggregator.
    AggregateShare,
    /// The reconstructed mask sum, produced at the aggregator.
    Reconstruction,
}

/// One message as it crossed (or, for the reconstruction, terminated) the
/// simulated network, payload included.
#[derive(Debug, Clone)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub from: usize,
    pub to: usize,
    pub payload: Vec<u64>,
}

impl ProtocolMessage {
    /// Hex digest of the payload, for compact logging.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.payload {
            hasher.update(v.to_le_bytes());
        }
        let bytes = hasher.finalize();
        bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything that crossed node boundaries during one aggregation.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    messages: Vec<ProtocolMessage>,
}

impl Transcript {
    pub fn messages(&self) -> &[ProtocolMessage] {
        &self.messages
    }

    /// True when no recorded payload equals any of the given plaintext
    /// field vectors; the privacy audit runs this against every member's
    /// quantized parameters.
    pub fn leaks_none_of(&self, plaintexts: &[Vec<u64>]) -> bool {
        self.messages
            .iter()
            .all(|m| plaintexts.iter().all(|p| p != &m.payload))
    }

    /// One line per message: kind, endpoints, payload length and digest.
    pub fn log_lines(&self) -> Vec<String> {
        self.messages
            .iter()
            .map(|m| {
                format!(
                    "{:?} {}->{} len={} sha256={}",
                    m.kind,
                    m.from,
                    m.to,
                    m.payload.len(),
                    m.digest()
                )
            })
            .collect()
    }

    fn push(&mut self, kind: MessageKind, from: usize, to: usize, payload: Vec<u64>) {
        self.messages.push(ProtocolMessage { kind, from, to, payload });
    }
}

/// Result of one secure aggregation.
#[derive(Debug, Clone)]
pub struct SecureAggregate {
    /// Mean of the included members' parameter vectors.
    pub mean: Vec<f64>,
    /// The unmasked field-domain sum of the included quantized vectors.
    pub aggregate_field: Vec<u64>,
    /// Node ids of the members whose uploads made it into the sum.
    pub included: Vec<usize>,
    /// Coordinates clamped to the clip bound during quantization.
    pub clipped: u64,
    pub transcript: Transcript,
}

/// Runs one masked aggregation over the group and returns the mean of the
/// surviving members' parameters plus the full message transcript.
///
/// `group` lists member node ids, `params_of` their parameter vectors in
/// the same order, and `dropped` marks members that vanish after
/// distributing mask shares but before uploading.
pub fn secure_aggregate<R: Rng>(
    aggregator: usize,
    group: &[usize],
    params_of: &[&[f64]],
    field: &FieldParams,
    threshold: usize,
    dropped: &[bool],
    rng: &mut R,
) -> Result<SecureAggregate> {
    let m = group.len();
    if m < 2 {
        return Err(Error::Domain(format!("group size {m} below the minimum of 2")));
    }
    if params_of.len() != m || dropped.len() != m {
        return Err(Error::Domain(
            "group, parameters and dropout flags must have equal length".into(),
        ));
    }
    if threshold == 0 || threshold > m {
        return Err(Error::Domain(format!(
            "threshold {threshold} outside 1..={m}"
        )));
    }
    let mut seen = group.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain("group members must be distinct".into()));
    }
    let dim = params_of[0].len();
    if dim == 0 || params_of.iter().any(|p| p.len() != dim) {
        return Err(Error::Domain(
            "parameter vectors must be non-empty and equally sized".into(),
        ));
    }
    field.check_headroom(m)?;

    let survivors: Vec<usize> = (0..m).filter(|&j| !dropped[j]).collect();
    if survivors.len() < threshold {
        return Err(Error::AggregationFailure {
            surviving: survivors.len(),
            threshold,
        });
    }

    let mut transcript = Transcript::default();

    // Phase 1: every member samples a mask and hands one Shamir share of it
    // to each other member. held[k][j] is member k's share of member j's
    // mask; self-shares stay local and are not transcript messages.
    let mut masks: Vec<Vec<u64>> = Vec::with_capacity(m);
    let mut held: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); m]; m];
    for j in 0..m {
        let mask: Vec<u64> = (0..dim).map(|_| field.random_element(rng)).collect();
        let shares = share_secret(field, &mask, m, threshold, rng)?;
        for (k, share) in shares.into_iter().enumerate() {
            if k != j {
                transcript.push(MessageKind::MaskShare, group[j], group[k], share.values.clone());
            }
            held[k][j] = share.values;
        }
        masks.push(mask);
    }

    // Phase 2: survivors quantize, mask and upload.
    let mut clipped = 0u64;
    let mut cipher_sum = vec![0u64; dim];
    for &j in &survivors {
        let (q, clip_count) = field.quantize(params_of[j]);
        clipped += clip_count;
        let cipher: Vec<u64> =
            q.iter().zip(&masks[j]).map(|(&qi, &mi)| field.add(qi, mi)).collect();
        for (s, &c) in cipher_sum.iter_mut().zip(&cipher) {
            *s = field.add(*s, c);
        }
        transcript.push(MessageKind::MaskedUpload, group[j], aggregator, cipher);
    }

    // Phase 3: each survivor sums its shares of the surviving masks; the
    // aggregator reconstructs only that mask sum.
    let mut aggregate_shares = Vec::with_capacity(survivors.len());
    for &k in &survivors {
        let mut sum = vec![0u64; dim];
        for &j in &survivors {
            for (s, &v) in sum.iter_mut().zip(&held[k][j]) {
                *s = field.add(*s, v);
            }
        }
        transcript.push(MessageKind::AggregateShare, group[k], aggregator, sum.clone());
        aggregate_shares.push(ShamirShare { point: k as u64 + 1, values: sum });
    }
    let mask_sum = reconstruct(field, &aggregate_shares, threshold)?;
    transcript.push(MessageKind::Reconstruction, aggregator, aggregator, mask_sum.clone());

    let aggregate_field: Vec<u64> = cipher_sum
        .iter()
        .zip(&mask_sum)
        .map(|(&c, &mk)| field.sub(c, mk))
        .collect();
    let inv_n = 1.0 / survivors.len() as f64;
    let mean: Vec<f64> = aggregate_field.iter().map(|&v| field.decode(v) * inv_n).collect();

    Ok(SecureAggregate {
        mean,
        aggregate_field,
        included: survivors.iter().map(|&j| group[j]).collect(),
        clipped,
        transcript,
    })
}
