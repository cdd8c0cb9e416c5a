//! Prime-field arithmetic and fixed-point encoding of model parameters.
//!
//! Parameters are clipped to [-R, R], scaled by 2^f and rounded to integers,
//! then embedded in Z_p with negatives represented as p + v. The field is
//! sized so that a sum of up to 16 clipped vectors plus one mask never wraps,
//! which keeps the signed decoding of aggregates unambiguous.

use rand::Rng;

use crate::error::Error;
use crate::Result;

/// Default field modulus, the Mersenne prime 2^61 - 1.
pub const DEFAULT_PRIME: u64 = 2_305_843_009_213_693_951;
/// Default number of fractional bits.
pub const DEFAULT_FRAC_BITS: u32 = 16;
/// Default clipping bound for parameter values.
pub const DEFAULT_CLIP: f64 = 64.0;
/// Largest group size the default headroom check provisions for.
pub const HEADROOM_GROUPS: usize = 16;

/// Field modulus plus the fixed-point encoding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldParams {
    pub prime: u64,
    pub frac_bits: u32,
    pub clip: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self { prime: DEFAULT_PRIME, frac_bits: DEFAULT_FRAC_BITS, clip: DEFAULT_CLIP }
    }
}

impl FieldParams {
    pub fn new(prime: u64, frac_bits: u32, clip: f64) -> Result<Self> {
        if !is_prime(prime) {
            return Err(Error::Domain(format!("{prime} is not prime")));
        }
        if frac_bits >= 60 {
            return Err(Error::Domain("frac_bits must be below 60".into()));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::Domain("clip bound must be positive and finite".into()));
        }
        let params = Self { prime, frac_bits, clip };
        params.check_headroom(HEADROOM_GROUPS)?;
        Ok(params)
    }

    /// Ensures a sum of `groups + 1` clipped encodings cannot reach p/2.
    pub fn check_headroom(&self, groups: usize) -> Result<()> {
        let worst = (groups as u128 + 1)
            .checked_mul(self.clip.ceil() as u128)
            .and_then(|v| v.checked_mul(1u128 << self.frac_bits))
            .ok_or_else(|| Error::Capacity("headroom bound overflows".into()))?;
        if worst >= (self.prime / 2) as u128 {
            return Err(Error::Domain(format!(
                "field too small: {groups} clipped vectors of magnitude {} at {} fractional bits can wrap",
                self.clip, self.frac_bits
            )));
        }
        Ok(())
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = (a as u128 + b as u128) % self.prime as u128;
        s as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let s = (a as u128 + (self.prime - b % self.prime) as u128) % self.prime as u128;
        s as u64
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.prime as u128) as u64
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base %= self.prime;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(&self, a: u64) -> Result<u64> {
        if a % self.prime == 0 {
            return Err(Error::Domain("zero has no inverse".into()));
        }
        Ok(self.pow(a, self.prime - 2))
    }

    /// Uniform field element.
    pub fn random_element<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.gen_range(0..self.prime)
    }

    /// Fixed-point encoding of one value (already clipped).
    fn encode(&self, x: f64) -> u64 {
        let scaled = (x * (1u64 << self.frac_bits) as f64).round() as i64;
        if scaled < 0 {
            self.prime - scaled.unsigned_abs()
        } else {
            scaled as u64
        }
    }

    /// Clip-and-quantize a vector. Returns the encodings and how many
    /// coordinates were clipped.
    pub fn quantize(&self, values: &[f64]) -> (Vec<u64>, u64) {
        let mut clipped = 0;
        let encoded = values
            .iter()
            .map(|&x| {
                let bounded = x.clamp(-self.clip, self.clip);
                if bounded != x {
                    clipped += 1;
                }
                self.encode(bounded)
            })
            .collect();
        (encoded, clipped)
    }

    /// Signed decoding of one field element (centered lift, then unscale).
    pub fn decode(&self, v: u64) -> f64 {
        let v = v % self.prime;
        let signed = if v > self.prime / 2 { -((self.prime - v) as i128) } else { v as i128 };
        signed as f64 / (1u64 << self.frac_bits) as f64
    }

    pub fn dequantize(&self, values: &[u64]) -> Vec<f64> {
        values.iter().map(|&v| self.decode(v)).collect()
    }
}

/// Deterministic Miller-Rabin, exact for all u64.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut base: u64, mut exp: u64| {
        let mut acc = 1u64;
        base %= n;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = mulmod(acc, base);
            }
            base = mulmod(base, base);
            exp >>= 1;
        }
        acc
    };
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn quantize_matches_hand_checked_encodings() {
        let fp = FieldParams::default();
        let (q, clipped) = fp.quantize(&[1.5, -1.0]);
        assert_eq!(q[0], 98_304);
        assert_eq!(q[1], fp.prime - 65_536);
        assert_eq!(clipped, 0);
    }

    #[test]
    fn clipping_is_applied_and_counted() {
        let fp = FieldParams::default();
        let (q, clipped) = fp.quantize(&[1000.0, -1000.0, 3.0]);
        assert_eq!(clipped, 2);
        assert_eq!(fp.decode(q[0]), 64.0);
        assert_eq!(fp.decode(q[1]), -64.0);
    }

    #[test]
    fn sixteen_group_sums_decode_without_wrap() {
        let fp = FieldParams::default();
        let mut acc = 0u64;
        for i in 0..17 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let (q, _) = fp.quantize(&[sign * 64.0]);
            acc = fp.add(acc, q[0]);
        }
        assert_eq!(fp.decode(acc), 64.0);
    }

    #[test]
    fn rejects_composite_modulus_and_bad_bounds() {
        assert!(matches!(FieldParams::new(2_305_843_009_213_693_949, 16, 64.0), Err(Error::Domain(_))));
        assert!(matches!(FieldParams::new(97, 16, 64.0), Err(Error::Domain(_)))); // no headroom
        assert!(matches!(FieldParams::new(DEFAULT_PRIME, 16, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn default_params_pass_validation() {
        FieldParams::new(DEFAULT_PRIME, DEFAULT_FRAC_BITS, DEFAULT_CLIP).unwrap();
    }

    #[test]
    fn inverse_multiplies_to_one() {
        let fp = FieldParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = fp.random_element(&mut rng).max(1);
            assert_eq!(fp.mul(a, fp.inv(a).unwrap()), 1);
        }
        assert!(fp.inv(0).is_err());
    }

    #[test]
    fn primality_check_agrees_with_known_values() {
        assert!(is_prime(2));
        assert!(is_prime(97));
        assert!(is_prime(DEFAULT_PRIME));
        assert!(!is_prime(1));
        assert!(!is_prime(561)); // Carmichael
        assert!(!is_prime((1 << 61) - 3));
    }

    proptest! {
        #[test]
        fn quantization_roundtrip_within_half_step(xs in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let fp = FieldParams::default();
            let (q, _) = fp.quantize(&xs);
            let back = fp.dequantize(&q);
            let half_step = 0.5 / (1u64 << fp.frac_bits) as f64;
            for (x, y) in xs.iter().zip(&back) {
                let expected = x.clamp(-fp.clip, fp.clip);
                prop_assert!((expected - y).abs() <= half_step, "{expected} vs {y}");
            }
        }

        #[test]
        fn field_ops_respect_ring_identities(a in 0u64..DEFAULT_PRIME, b in 0u64..DEFAULT_PRIME) {
            let fp = FieldParams::default();
            prop_assert_eq!(fp.add(a, b), fp.add(b, a));
            prop_assert_eq!(fp.sub(fp.add(a, b), b), a % fp.prime);
            prop_assert_eq!(fp.mul(a, 1), a % fp.prime);
        }
    }
}
