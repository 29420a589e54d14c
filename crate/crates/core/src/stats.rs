//! Rank-based significance tests on per-model generalization levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// p-values strictly below this are reported as significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    KruskalWallis,
    MannWhitneyU,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    /// H for Kruskal-Wallis, U for Mann-Whitney.
    pub statistic: f64,
    pub p_value: f64,
    pub group_sizes: Vec<usize>,
    pub tie_corrected: bool,
    pub method: TestMethod,
    /// Every observation was tied; the statistic carries no information.
    #[serde(default)]
    pub degenerate: bool,
}

impl StatTestResult {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }

    /// Copy with the p-value multiplied by `n_comparisons`, capped at 1.
    pub fn bonferroni(&self, n_comparisons: usize) -> Self {
        let mut out = self.clone();
        out.p_value = (self.p_value * n_comparisons.max(1) as f64).min(1.0);
        out
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("rank tests need finite observations"));
    }
    Ok(())
}

/// 1-based ranks with ties replaced by their average rank.
pub fn rank_with_ties(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::contract("cannot rank an empty sample"));
    }
    check_finite(values)?;
    Ok(ranks_and_ties(values).0)
}

/// Ranks plus the tie term Σ(t³ − t) over tie blocks.
fn ranks_and_ties(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn h_statistic(ranks: &[f64], sizes: &[usize]) -> f64 {
    let n = ranks.len() as f64;
    let mut sum = 0.0;
    let mut start = 0;
    for &s in sizes {
        let r: f64 = ranks[start..start + s].iter().sum();
        sum += r * r / s as f64;
        start += s;
    }
    12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<StatTestResult> {
    if groups.len() < 2 {
        return Err(Error::contract("Kruskal-Wallis needs at least two groups"));
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::contract(format!("group {g} has fewer than two samples")));
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    check_finite(&pooled)?;
    let n = pooled.len() as f64;
    let (ranks, ties) = ranks_and_ties(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    let base = StatTestResult {
        statistic: 0.0,
        p_value: 1.0,
        group_sizes: sizes.clone(),
        tie_corrected: ties > 0.0,
        method: TestMethod::KruskalWallis,
        degenerate: false,
    };
    if correction <= 0.0 {
        return Ok(StatTestResult { degenerate: true, ..base });
    }
    // Tiny negative values are rounding noise of an exact zero.
    let h = (h_statistic(&ranks, &sizes) / correction).max(0.0);
    let p = chi_square_sf(h, groups.len() - 1)?;
    Ok(StatTestResult {
        statistic: h,
        p_value: p.clamp(0.0, 1.0),
        ..base
    })
}

/// Two-sided Mann-Whitney U test, normal approximation with tie and
/// continuity corrections. `U = min(U1, U2)`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("Mann-Whitney needs two non-empty samples"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    check_finite(&pooled)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let (ranks, ties) = ranks_and_ties(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let u2 = n1 * n2 - u1;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0));
    let base = StatTestResult {
        statistic: u1.min(u2),
        p_value: 1.0,
        group_sizes: vec![a.len(), b.len()],
        tie_corrected: ties > 0.0,
        method: TestMethod::MannWhitneyU,
        degenerate: false,
    };
    if !(var > 0.0) {
        return Ok(StatTestResult {
            statistic: mu,
            degenerate: true,
            ..base
        });
    }
    let z = ((u1 - mu).abs() - 0.5).max(0.0) / var.sqrt();
    // P(|Z| > z) = P(chi2_1 > z^2)
    let p = chi_square_sf(z * z, 1)?;
    Ok(StatTestResult {
        p_value: p.clamp(0.0, 1.0),
        ..base
    })
}

/// All pairwise Mann-Whitney tests between groups, in (i, j) order with i < j.
pub fn pairwise_mann_whitney(groups: &[Vec<f64>], bonferroni: bool) -> Result<Vec<(usize, usize, StatTestResult)>> {
    let k = groups.len();
    let n_pairs = k * k.saturating_sub(1) / 2;
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..k {
        for j in i + 1..k {
            let r = mann_whitney_u(&groups[i], &groups[j])?;
            out.push((i, j, if bonferroni { r.bonferroni(n_pairs) } else { r }));
        }
    }
    Ok(out)
}

/// ln Γ(df / 2), exact recurrences for integer and half-integer arguments.
fn ln_gamma_half(df: usize) -> f64 {
    if df % 2 == 0 {
        (1..df / 2).map(|k| (k as f64).ln()).sum()
    } else {
        0.5 * std::f64::consts::PI.ln() + (1..=df / 2).map(|k| (k as f64 - 0.5).ln()).sum::<f64>()
    }
}

/// Survival function of the chi-square distribution, Q(df/2, x/2).
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::contract("chi-square needs df >= 1"));
    }
    if !(x >= 0.0) {
        return Err(Error::contract(format!("chi-square argument {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let a = df as f64 / 2.0;
    let y = x / 2.0;
    let ln_prefix = a * y.ln() - y - ln_gamma_half(df);
    if y < a + 1.0 {
        // Series for P(a, y).
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= y / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        Ok((1.0 - sum * ln_prefix.exp()).clamp(0.0, 1.0))
    } else {
        // Modified Lentz continued fraction for Q(a, y).
        let tiny = 1e-300;
        let mut b = y + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok((ln_prefix.exp() * h).clamp(0.0, 1.0))
    }
}

/// Exact permutation p-value of the Kruskal-Wallis H statistic: the share
/// of all assignments of the pooled data to groups of the same sizes whose
/// H is at least the observed one. Exhaustive, so only for small N.
pub fn kruskal_wallis_permutation_p(groups: &[Vec<f64>]) -> Result<f64> {
    let observed = kruskal_wallis(groups)?;
    let sizes = observed.group_sizes.clone();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.len() > 12 {
        return Err(Error::contract("exhaustive permutation test limited to N <= 12"));
    }
    let n = pooled.len();
    let (ranks, ties) = ranks_and_ties(&pooled);
    let correction = 1.0 - ties / ((n * n * n - n) as f64);
    if correction <= 0.0 {
        return Ok(1.0);
    }
    let h_obs = observed.statistic;
    let mut label = vec![usize::MAX; n];
    let mut remaining = sizes.clone();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut permuted = vec![0.0; n];
    #[allow(clippy::too_many_arguments)]
    fn assign(
        pos: usize,
        label: &mut [usize],
        remaining: &mut [usize],
        ranks: &[f64],
        sizes: &[usize],
        permuted: &mut [f64],
        stats: &mut (f64, f64, u64, u64),
    ) {
        if pos == label.len() {
            // regroup ranks by label
            let mut idx = 0;
            for g in 0..sizes.len() {
                for (i, &l) in label.iter().enumerate() {
                    if l == g {
                        permuted[idx] = ranks[i];
                        idx += 1;
                    }
                }
            }
            let h = h_statistic(permuted, sizes) / stats.0;
            stats.3 += 1;
            if h >= stats.1 - 1e-9 {
                stats.2 += 1;
            }
            return;
        }
        for g in 0..remaining.len() {
            if remaining[g] > 0 {
                remaining[g] -= 1;
                label[pos] = g;
                assign(pos + 1, label, remaining, ranks, sizes, permuted, stats);
                remaining[g] += 1;
            }
        }
    }
    let mut st = (correction, h_obs, hits, total);
    assign(0, &mut label, &mut remaining, &ranks, &sizes, &mut permuted, &mut st);
    hits = st.2;
    total = st.3;
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_examples() {
        assert_eq!(rank_with_ties(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_with_ties(&[5.0, 5.0]).unwrap(), vec![1.5, 1.5]);
        assert_eq!(rank_with_ties(&[3.0, 1.0, 3.0, 2.0]).unwrap(), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(rank_with_ties(&[]).is_err());
        assert!(rank_with_ties(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn kruskal_wallis_examples() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
        let r = kruskal_wallis(&g).unwrap();
        assert!((r.statistic - 7.2).abs() <= 1e-12, "{}", r.statistic);
        assert!((r.p_value - (-3.6f64).exp()).abs() <= 1e-10);
        assert_eq!(r.group_sizes, vec![3, 3, 3]);
        assert!(!r.tie_corrected);
        assert!(!r.significant());

        let same = vec![vec![1.0, 2.0, 3.0]; 3];
        let r = kruskal_wallis(&same).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.p_value, 1.0);
        assert!(r.tie_corrected);
    }

    #[test]
    fn kruskal_wallis_errors_and_degenerate() {
        assert!(kruskal_wallis(&[vec![1.0, 2.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let r = kruskal_wallis(&[vec![0.0; 4], vec![0.0; 5]]).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn kruskal_wallis_tie_correction_matches_hand_value() {
        // pooled [1,1,2,2,3,3]: ranks 1.5,1.5,3.5,3.5,5.5,5.5
        // H_raw = 12/42 * (3^2/2 + 7^2/2 + 11^2/2) - 21 = 4.5714..., C = 1 - 18/210
        let r = kruskal_wallis(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let raw = 12.0 / 42.0 * (9.0 + 49.0 + 121.0) / 2.0 - 21.0;
        assert!((r.statistic - raw / (1.0 - 18.0 / 210.0)).abs() < 1e-12);
        assert!(r.tie_corrected);
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        let a = [1.0, 5.0, 2.0, 8.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert_eq!(r.p_value, 1.0);
        let d = mann_whitney_u(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!((d.statistic, d.p_value), (3.0, 1.0));
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mann_whitney_known_value() {
        // a=[1..5], b=[6..10]: U1=0, mu=12.5, var=25*11/12; z=(12.5-0.5)/sqrt(22.9166..)
        let a: Vec<f64> = (1..=5).map(f64::from).collect();
        let b: Vec<f64> = (6..=10).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        let z = 12.0 / (25.0f64 * 11.0 / 12.0).sqrt();
        let p = chi_square_sf(z * z, 1).unwrap();
        assert_eq!(r.p_value, p);
        // 2 * (1 - Phi(2.5067)) ~= 0.012186
        assert!((p - 0.0121856).abs() < 1e-6, "{p}");
    }

    #[test]
    fn chi_square_examples() {
        for df in 1..=20 {
            assert_eq!(chi_square_sf(0.0, df).unwrap(), 1.0);
        }
        assert!((chi_square_sf(3.6, 2).unwrap() - (-1.8f64).exp()).abs() <= 1e-10);
        assert!((chi_square_sf(7.2, 2).unwrap() - (-3.6f64).exp()).abs() <= 1e-10);
        assert!((chi_square_sf(1.0, 1).unwrap() - 0.3173105078629141).abs() <= 1e-12);
        assert!(chi_square_sf(-1.0, 2).is_err());
        assert!(chi_square_sf(1.0, 0).is_err());
        assert!(chi_square_sf(f64::NAN, 3).is_err());
    }

    /// Closed form for even df: Q = e^{-x/2} Σ_{k<df/2} (x/2)^k / k!.
    fn even_df_oracle(x: f64, df: usize) -> f64 {
        let y = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..df / 2 {
            term *= y / k as f64;
            sum += term;
        }
        (-y).exp() * sum
    }

    /// Odd df via Q(1/2, y) = erfc(sqrt y) and the upward recurrence
    /// Q(a+1, y) = Q(a, y) + y^a e^{-y} / Γ(a+1), with erfc by quadrature.
    fn odd_df_oracle(x: f64, df: usize) -> f64 {
        let y = x / 2.0;
        let s = y.sqrt();
        // erf(s) = 2/sqrt(pi) ∫_0^s e^{-t^2} dt, composite Simpson
        let m = 20_000;
        let h = s / m as f64;
        let mut acc = 0.0;
        for i in 0..=m {
            let t = i as f64 * h;
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * (-t * t).exp();
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * acc * h / 3.0;
        let mut q = 1.0 - erf;
        let mut a = 0.5;
        while a < df as f64 / 2.0 {
            q += (a * y.ln() - y - libm_lgamma(a + 1.0)).exp();
            a += 1.0;
        }
        q
    }

    fn libm_lgamma(a: f64) -> f64 {
        // a is a positive half-integer here
        super::ln_gamma_half((2.0 * a).round() as usize)
    }

    #[test]
    fn chi_square_against_closed_forms() {
        let mut worst: f64 = 0.0;
        for df in 1..=20 {
            for i in 0..=200 {
                let x = i as f64 * 0.5;
                let want = if df % 2 == 0 { even_df_oracle(x, df) } else { odd_df_oracle(x, df) };
                let got = chi_square_sf(x, df).unwrap();
                worst = worst.max((got - want).abs());
            }
        }
        assert!(worst <= 1e-10, "worst {worst}");
    }

    #[test]
    fn permutation_oracle_hand_cases() {
        // Two groups of two with full separation: 2 of the 6 splits reach max H.
        let p = kruskal_wallis_permutation_p(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((p - 2.0 / 6.0).abs() < 1e-15);
        // [1,2,3],[4,5,6],[7,8,9]: H = 7.2 is the maximum; 3! orderings of 1680.
        let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
        let p = kruskal_wallis_permutation_p(&g).unwrap();
        assert!((p - 6.0 / 1680.0).abs() < 1e-15);
        assert_eq!(kruskal_wallis_permutation_p(&[vec![1.0; 2], vec![1.0; 3]]).unwrap(), 1.0);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.bonferroni(1000).p_value, 1.0);
        assert_eq!(r.bonferroni(1).p_value, r.p_value);
        let pw = pairwise_mann_whitney(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], true).unwrap();
        assert_eq!(pw.len(), 3);
        assert_eq!((pw[2].0, pw[2].1), (1, 2));
    }

    proptest! {
        #[test]
        fn rank_sum_identity(v in prop::collection::vec(-5i32..5, 1..60)) {
            let x: Vec<f64> = v.iter().map(|&k| k as f64).collect();
            let r = rank_with_ties(&x).unwrap();
            let n = x.len() as f64;
            prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }

        #[test]
        fn h_invariant_under_exp(
            a in prop::collection::vec(-3.0f64..3.0, 2..8),
            b in prop::collection::vec(-3.0f64..3.0, 2..8),
            c in prop::collection::vec(-3.0f64..3.0, 2..8),
        ) {
            let g = vec![a, b, c];
            let e: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect();
            let (r1, r2) = (kruskal_wallis(&g).unwrap(), kruskal_wallis(&e).unwrap());
            prop_assert!((r1.statistic - r2.statistic).abs() < 1e-9);
            prop_assert!(r1.statistic >= 0.0 && (0.0..=1.0).contains(&r1.p_value));
        }

        #[test]
        fn mann_whitney_symmetric(
            a in prop::collection::vec(-3i32..3, 1..12),
            b in prop::collection::vec(-3i32..3, 1..12),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let (r1, r2) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
            prop_assert_eq!(r1.statistic, r2.statistic);
            prop_assert!((r1.p_value - r2.p_value).abs() < 1e-12);
            prop_assert!(r1.statistic >= 0.0 && (0.0..=1.0).contains(&r1.p_value));
        }

        #[test]
        fn chi_square_monotone_decreasing(df in 1usize..20, x in 0.0f64..100.0, dx in 0.0f64..5.0) {
            prop_assert!(chi_square_sf(x + dx, df).unwrap() <= chi_square_sf(x, df).unwrap() + 1e-15);
        }
    }
}
