//! Shamir secret sharing of field vectors.
//!
//! Masks are shared coordinate-wise with independent random polynomials of
//! degree t-1 whose constant term is the secret coordinate. Shares are
//! evaluations at the fixed points 1..=n, and any t of them reconstruct the
//! secret by Lagrange interpolation at zero.

use rand::Rng;

use crate::error::Error;
use crate::field::FieldParams;
use crate::Result;

/// One holder's share: the evaluation point and one value per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ShamirShare {
    pub point: u64,
    pub values: Vec<u64>,
}

/// Splits a secret vector into n shares with reconstruction threshold t.
pub fn share_secret<R: Rng>(
    field: &FieldParams,
    secret: &[u64],
    n: usize,
    t: usize,
    rng: &mut R,
) -> Result<Vec<ShamirShare>> {
    if t == 0 || t > n {
        return Err(Error::Domain(format!("threshold {t} must lie in 1..={n}")));
    }
    if (n as u64) >= field.prime {
        return Err(Error::Domain("more shares than field elements".into()));
    }
    if let Some(v) = secret.iter().find(|&&v| v >= field.prime) {
        return Err(Error::Domain(format!("secret value {v} is not a field element")));
    }
    let mut shares: Vec<ShamirShare> = (1..=n as u64)
        .map(|point| ShamirShare { point, values: Vec::with_capacity(secret.len()) })
        .collect();
    for &coordinate in secret {
        let mut coeffs = Vec::with_capacity(t);
        coeffs.push(coordinate);
        for _ in 1..t {
            coeffs.push(field.random_element(rng));
        }
        for share in &mut shares {
            // Horner evaluation at the share's point.
            let mut acc = 0u64;
            for &c in coeffs.iter().rev() {
                acc = field.add(field.mul(acc, share.point), c);
            }
            share.values.push(acc);
        }
    }
    Ok(shares)
}

/// Reconstructs the secret from at least t shares (the first t are used).
pub fn reconstruct(field: &FieldParams, shares: &[ShamirShare], t: usize) -> Result<Vec<u64>> {
    if t == 0 {
        return Err(Error::Domain("threshold must be at least 1".into()));
    }
    if shares.len() < t {
        return Err(Error::Protocol(format!(
            "{} shares provided, {t} required for reconstruction",
            shares.len()
        )));
    }
    let used = &shares[..t];
    let len = used[0].values.len();
    for share in used {
        if share.values.len() != len {
            return Err(Error::Protocol("shares have mismatched vector lengths".into()));
        }
        if share.point == 0 || share.point >= field.prime {
            return Err(Error::Protocol(format!("invalid evaluation point {}", share.point)));
        }
    }
    for (i, a) in used.iter().enumerate() {
        if used[i + 1..].iter().any(|b| b.point == a.point) {
            return Err(Error::Protocol(format!("duplicate evaluation point {}", a.point)));
        }
    }
    // Lagrange basis evaluated at zero, one weight per share.
    let mut weights = Vec::with_capacity(t);
    for (i, share_i) in used.iter().enumerate() {
        let mut num = 1u64;
        let mut den = 1u64;
        for (j, share_j) in used.iter().enumerate() {
            if i == j {
                continue;
            }
            num = field.mul(num, share_j.point);
            den = field.mul(den, field.sub(share_j.point, share_i.point));
        }
        weights.push(field.mul(num, field.inv(den)?));
    }
    let mut secret = vec![0u64; len];
    for (share, &w) in used.iter().zip(&weights) {
        for (acc, &v) in secret.iter_mut().zip(&share.values) {
            *acc = field.add(*acc, field.mul(w, v));
        }
    }
    Ok(secret)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f97() -> FieldParams {
        FieldParams { prime: 97, frac_bits: 0, clip: 1.0 }
    }

    #[test]
    fn fixed_polynomial_shares_and_reconstruction() {
        // Secret 5 with polynomial 5 + 3x over F_97.
        let field = f97();
        let shares: Vec<ShamirShare> = (1u64..=3)
            .map(|x| ShamirShare { point: x, values: vec![(5 + 3 * x) % 97] })
            .collect();
        assert_eq!(shares[0].values, vec![8]);
        assert_eq!(shares[1].values, vec![11]);
        assert_eq!(shares[2].values, vec![14]);
        let picked = vec![shares[0].clone(), shares[2].clone()];
        assert_eq!(reconstruct(&field, &picked, 2).unwrap(), vec![5]);
        let picked = vec![shares[1].clone(), shares[2].clone()];
        assert_eq!(reconstruct(&field, &picked, 2).unwrap(), vec![5]);
    }

    #[test]
    fn share_then_reconstruct_roundtrip() {
        let field = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let secret: Vec<u64> = (0..20).map(|_| field.random_element(&mut rng)).collect();
        let shares = share_secret(&field, &secret, 5, 3, &mut rng).unwrap();
        assert_eq!(shares.len(), 5);
        // Any window of 3 shares works, including out-of-order picks.
        let picked = vec![shares[4].clone(), shares[1].clone(), shares[2].clone()];
        assert_eq!(reconstruct(&field, &picked, 3).unwrap(), secret);
    }

    #[test]
    fn every_subset_of_every_threshold_reconstructs() {
        let field = f97();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6usize {
            for t in 1..=n {
                let secret = vec![rng.gen_range(0..97), rng.gen_range(0..97)];
                let shares = share_secret(&field, &secret, n, t, &mut rng).unwrap();
                for mask in 0u32..1 << n {
                    if mask.count_ones() as usize != t {
                        continue;
                    }
                    let picked: Vec<ShamirShare> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| shares[i].clone())
                        .collect();
                    assert_eq!(reconstruct(&field, &picked, t).unwrap(), secret, "n={n} t={t}");
                }
            }
        }
    }

    #[test]
    fn fewer_than_threshold_shares_fail() {
        let field = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shares = share_secret(&field, &[42], 4, 3, &mut rng).unwrap();
        assert!(matches!(reconstruct(&field, &shares[..2], 3), Err(Error::Protocol(_))));
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let field = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(share_secret(&field, &[1], 4, 0, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(share_secret(&field, &[1], 2, 3, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(share_secret(&field, &[field.prime], 2, 2, &mut rng), Err(Error::Domain(_))));
        let dup = vec![
            ShamirShare { point: 1, values: vec![1] },
            ShamirShare { point: 1, values: vec![2] },
        ];
        assert!(matches!(reconstruct(&field, &dup, 2), Err(Error::Protocol(_))));
    }
}
