use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 64;
/// Smoothing bandwidth for plotted curves, in bins.
pub const PLOT_BANDWIDTH_BINS: f64 = 2.0;

const LO: f64 = -1.0;
const HI: f64 = 1.0;

/// Uniform-bin density estimate over [−1, 1]. Bins are right-open except the last.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    counts: Vec<u64>,
    densities: Vec<f64>,
    total: u64,
}

impl Histogram {
    pub fn from_values(values: &[f32], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("histogram of an empty sample".into()));
        }
        let mut counts = vec![0u64; bins];
        for &v in values {
            let v = v as f64;
            if !(LO..=HI).contains(&v) {
                return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
            }
            counts[Self::bin_of(v, bins)] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    /// Builds a histogram from raw counts; the total must be positive.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        assert!(total > 0 && !counts.is_empty(), "histogram needs positive mass");
        let width = (HI - LO) / counts.len() as f64;
        let densities = counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect();
        Self {
            counts,
            densities,
            total,
        }
    }

    fn bin_of(v: f64, bins: usize) -> usize {
        (((v - LO) / (HI - LO) * bins as f64).floor() as usize).min(bins - 1)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (HI - LO) / self.bins() as f64
    }

    /// `bins + 1` strictly increasing edges from −1 to 1.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.bins();
        (0..=n).map(|i| LO + (HI - LO) * i as f64 / n as f64).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let n = self.bins();
        (0..n).map(|i| LO + (HI - LO) * (i as f64 + 0.5) / n as f64).collect()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Splits every bin into `factor` equal sub-bins sharing its mass.
    pub fn refine(&self, factor: usize) -> Vec<f64> {
        self.densities
            .iter()
            .flat_map(|&d| std::iter::repeat(d).take(factor))
            .collect()
    }
}

fn check_grid(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "histograms on different grids: {} vs {} bins",
            p.len(),
            q.len()
        )));
    }
    Ok((HI - LO) / p.len() as f64)
}

/// Gaussian kernel smoothing over bin centres, renormalized to unit mass.
/// `bandwidth` is measured in bins.
pub fn smooth_density(h: &Histogram, bandwidth: f64) -> Result<Vec<f64>> {
    smooth_densities(h.densities(), bandwidth)
}

pub fn smooth_densities(densities: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
    }
    let width = check_grid(densities, densities)?;
    let n = densities.len();
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let z = (i as f64 - j as f64) / bandwidth;
                    densities[j] * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect();
    let mass: f64 = out.iter().sum::<f64>() * width;
    for v in &mut out {
        *v /= mass;
    }
    Ok(out)
}

/// `Σ min(p, q) · width`
pub fn overlap_coefficient(p: &[f64], q: &[f64]) -> Result<f64> {
    let width = check_grid(p, q)?;
    let s: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).sum();
    Ok((s * width).clamp(0.0, 1.0))
}

/// Jensen–Shannon divergence in nats, clamped to [0, ln 2].
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    let width = check_grid(p, q)?;
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            term(a, m) + term(b, m)
        })
        .sum();
    Ok((0.5 * s * width).clamp(0.0, std::f64::consts::LN_2))
}

/// Wasserstein-1 distance from the cumulative-difference sum.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64> {
    let width = check_grid(p, q)?;
    let (mut cp, mut cq, mut s) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in p.iter().zip(q) {
        cp += a * width;
        cq += b * width;
        s += (cp - cq).abs();
    }
    Ok(s * width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn point_mass(bins: usize, at: usize) -> Histogram {
        let mut c = vec![0; bins];
        c[at] = 1;
        Histogram::from_counts(c)
    }

    #[test]
    fn constant_zero_lands_in_one_bin() {
        let h = Histogram::from_values(&[0.0; 50], 64).unwrap();
        assert_eq!(h.counts()[32], 50);
        assert_eq!(h.counts().iter().sum::<u64>(), 50);
        assert!((h.densities()[32] * h.bin_width() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_and_edges() {
        let h = Histogram::from_values(&[1.0, -1.0], 64).unwrap();
        assert_eq!((h.counts()[0], h.counts()[63]), (1, 1));
        let e = h.edges();
        assert_eq!((e[0], e[64], e.len()), (-1.0, 1.0, 65));
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert!(Histogram::from_values(&[1.5], 4).is_err());
        assert!(Histogram::from_values(&[], 4).is_err());
    }

    #[test]
    fn uniform_sample_densities_within_five_standard_errors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let h = Histogram::from_values(&values, 64).unwrap();
        // Bin count ~ Binomial(n, 1/64); density = count / (n·w).
        let p = 1.0 / 64.0;
        let se = (n as f64 * p * (1.0 - p)).sqrt() / (n as f64 * h.bin_width());
        for &d in h.densities() {
            assert!((d - 0.5).abs() < 5.0 * se, "density {d}, se {se}");
        }
    }

    #[test]
    fn smoothing_preserves_mass_and_peak() {
        let h = point_mass(64, 20);
        let s = smooth_density(&h, PLOT_BANDWIDTH_BINS).unwrap();
        assert!((s.iter().sum::<f64>() * h.bin_width() - 1.0).abs() < 1e-12);
        let argmax = (0..64).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(argmax, 20);
        assert!(s[19] < s[20] && s[18] < s[19] && s[21] < s[20] && s[22] < s[21]);
        assert!(smooth_density(&h, 0.0).is_err());

        let mixed = Histogram::from_counts((0..64).map(|i| (i * 7 % 13) as u64).collect());
        let tiny = smooth_density(&mixed, 1e-3).unwrap();
        for (a, b) in tiny.iter().zip(mixed.densities()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn closed_forms() {
        let left = Histogram::from_counts([vec![1; 32], vec![0; 32]].concat());
        let all = Histogram::from_counts(vec![1; 64]);
        assert!((overlap_coefficient(left.densities(), all.densities()).unwrap() - 0.5).abs() < 1e-12);
        assert!((overlap_coefficient(all.densities(), all.densities()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(js_divergence(all.densities(), all.densities()).unwrap(), 0.0);
        assert_eq!(wasserstein1(all.densities(), all.densities()).unwrap(), 0.0);

        let right = Histogram::from_counts([vec![0; 32], vec![1; 32]].concat());
        assert_eq!(overlap_coefficient(left.densities(), right.densities()).unwrap(), 0.0);
        let js = js_divergence(left.densities(), right.densities()).unwrap();
        assert!((js - std::f64::consts::LN_2).abs() < 1e-9);

        let (a, b) = (point_mass(64, 10), point_mass(64, 25));
        let d = 15.0 * a.bin_width();
        assert!((wasserstein1(a.densities(), b.densities()).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let (a, b) = (point_mass(8, 0), point_mass(16, 0));
        assert!(overlap_coefficient(a.densities(), b.densities()).is_err());
        assert!(js_divergence(a.densities(), b.densities()).is_err());
        assert!(wasserstein1(a.densities(), b.densities()).is_err());
    }

    fn arb_hist() -> impl Strategy<Value = Histogram> {
        prop::collection::vec(0u64..20, 16).prop_filter_map("positive mass", |c| {
            (c.iter().sum::<u64>() > 0).then(|| Histogram::from_counts(c))
        })
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_bounded(p in arb_hist(), q in arb_hist()) {
            let (a, b) = (p.densities(), q.densities());
            prop_assert_eq!(js_divergence(a, b).unwrap(), js_divergence(b, a).unwrap());
            prop_assert_eq!(wasserstein1(a, b).unwrap(), wasserstein1(b, a).unwrap());
            let o = overlap_coefficient(a, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&o));
            let js = js_divergence(a, b).unwrap();
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&js));
            prop_assert!(wasserstein1(a, b).unwrap() >= 0.0);
        }

        #[test]
        fn w1_triangle(p in arb_hist(), q in arb_hist(), r in arb_hist()) {
            let (a, b, c) = (p.densities(), q.densities(), r.densities());
            let direct = wasserstein1(a, c).unwrap();
            prop_assert!(direct <= wasserstein1(a, b).unwrap() + wasserstein1(b, c).unwrap() + 1e-9);
        }

        #[test]
        fn overlap_one_iff_equal(p in arb_hist(), q in arb_hist()) {
            let (a, b) = (p.densities(), q.densities());
            let equal = a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
            let o = overlap_coefficient(a, b).unwrap();
            prop_assert_eq!(equal, (o - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn refinement_preserves_metrics(p in arb_hist(), q in arb_hist(), factor in 2usize..5) {
            let (a, b) = (p.densities(), q.densities());
            let (ra, rb) = (p.refine(factor), q.refine(factor));
            prop_assert!((overlap_coefficient(a, b).unwrap() - overlap_coefficient(&ra, &rb).unwrap()).abs() < 1e-9);
            prop_assert!((js_divergence(a, b).unwrap() - js_divergence(&ra, &rb).unwrap()).abs() < 1e-9);
            let dw = (wasserstein1(a, b).unwrap() - wasserstein1(&ra, &rb).unwrap()).abs();
            prop_assert!(dw <= p.bin_width());
        }

        #[test]
        fn densities_integrate_to_one(values in prop::collection::vec(-1.0f32..=1.0, 1..200), bins in 1usize..100) {
            let h = Histogram::from_values(&values, bins).unwrap();
            prop_assert!((h.densities().iter().sum::<f64>() * h.bin_width() - 1.0).abs() < 1e-9);
        }
    }
}
