//! Initial spin configurations, disorder fields and seeded random streams.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, SpinLattice};

pub type Vec3 = [f64; 3];

/// One classical spin vector per lattice spin, in lattice spin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinConfiguration {
    pub spins: Vec<Vec3>,
}

/// Per-vertex fractional shift of the protection strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderField {
    pub delta_j: Vec<f64>,
}

impl DisorderField {
    pub fn zeros(n_vertices: usize) -> Self {
        Self {
            delta_j: vec![0.0; n_vertices],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.delta_j.iter().all(|&d| d == 0.0)
    }
}

/// Reproducible random streams: trajectory `n` always draws from the same
/// substream of the master seed, independent of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    pub master_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Generator for trajectory `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        self.substream(index, 0)
    }

    /// Generator for sample `sub` belonging to trajectory `index`.
    pub fn substream(&self, index: u64, sub: u64) -> ChaCha8Rng {
        let seed = splitmix64(self.master_seed ^ splitmix64(index));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sub);
        rng
    }
}

impl SpinConfiguration {
    pub fn uniform(n: usize, spin: Vec3) -> Self {
        Self {
            spins: vec![spin; n],
        }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.spins.iter().map(|s| norm(s)).collect()
    }

    /// Largest deviation of any spin length from one.
    pub fn max_norm_deviation(&self) -> f64 {
        self.spins
            .iter()
            .map(|s| (norm(s) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// True when every spin is `(0, 0, +-1)` exactly.
    pub fn is_z_product(&self) -> bool {
        self.spins
            .iter()
            .all(|s| s[0] == 0.0 && s[1] == 0.0 && s[2].abs() == 1.0)
    }

    pub fn check_len(&self, lattice: &SpinLattice) -> Result<()> {
        if self.len() != lattice.n_spins() {
            return Err(Error::DimensionMismatch {
                context: "spin configuration",
                expected: lattice.n_spins(),
                found: self.len(),
            });
        }
        Ok(())
    }

    /// Writes `index,sx,sy,sz` rows with round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,sx,sy,sz")?;
        for (i, s) in self.spins.iter().enumerate() {
            writeln!(w, "{},{:?},{:?},{:?}", i, s[0], s[1], s[2])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut spins = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    format!("configuration csv line {}", lineno + 1),
                    "expected 4 fields",
                ));
            }
            let index: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::parse("configuration csv index", format!("{e}")))?;
            if index != spins.len() {
                return Err(Error::parse(
                    "configuration csv",
                    format!("index {index} out of order"),
                ));
            }
            let mut s = [0.0; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                s[k] = f
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse("configuration csv value", format!("{e}")))?;
            }
            spins.push(s);
        }
        Ok(Self { spins })
    }

    const MAGIC: &'static [u8; 8] = b"Z2SPIN01";

    /// Flat little-endian checkpoint: magic, spin count, then `3n` f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 24 * self.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for s in &self.spins {
            for c in s {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != Self::MAGIC {
            return Err(Error::parse("spin checkpoint", "bad magic header"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != 24 * n {
            return Err(Error::parse(
                "spin checkpoint",
                format!("expected {} payload bytes, found {}", 24 * n, body.len()),
            ));
        }
        let spins = body
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                [f(0), f(1), f(2)]
            })
            .collect();
        Ok(Self { spins })
    }
}

#[inline]
pub fn norm(s: &Vec3) -> f64 {
    (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
}

fn z_spin(up: bool) -> Vec3 {
    [0.0, 0.0, if up { 1.0 } else { -1.0 }]
}

/// Random `G_j = +1` product state of the model with matter.
///
/// Links are drawn uniformly from `+-z`; each matter spin is then fixed to
/// minus the product of its links.
pub fn sample_gauge_invariant<R: Rng + ?Sized>(
    lattice: &SpinLattice,
    rng: &mut R,
) -> SpinConfiguration {
    let nm = lattice.n_matter();
    let mut spins = vec![[0.0; 3]; lattice.n_spins()];
    for l in 0..lattice.n_links() {
        spins[nm + l] = z_spin(rng.random_bool(0.5));
    }
    for (j, links) in lattice.vertex_links.iter().enumerate() {
        let product: f64 = links.iter().map(|&l| spins[nm + l][2]).product();
        spins[j] = [0.0, 0.0, -product];
    }
    SpinConfiguration { spins }
}

/// Random even-parity link state of the model without matter.
///
/// Starts from all links down and applies `n_mix` random plaquette flips.
/// Matter entries are fixed at `+z` and never evolved.
pub fn sample_gauge_invariant_no_matter<R: Rng + ?Sized>(
    lattice: &SpinLattice,
    rng: &mut R,
    n_mix: i64,
) -> Result<SpinConfiguration> {
    if n_mix < 0 {
        return Err(Error::invalid("n_mix", "must be non-negative"));
    }
    let nm = lattice.n_matter();
    let mut spins = vec![z_spin(true); lattice.n_spins()];
    for s in &mut spins[nm..] {
        *s = z_spin(false);
    }
    if !lattice.plaquettes.is_empty() {
        for _ in 0..n_mix {
            let p = rng.random_range(0..lattice.plaquettes.len());
            for &l in &lattice.plaquettes[p] {
                spins[nm + l][2] = -spins[nm + l][2];
            }
        }
    }
    Ok(SpinConfiguration { spins })
}

/// Default plaquette-flip count for [`sample_gauge_invariant_no_matter`].
pub fn default_n_mix(lattice: &SpinLattice) -> i64 {
    10 * lattice.plaquettes.len() as i64
}

/// Gauge-invariant state with every bottom-row vertex turned into a defect.
pub fn line_defect_state<R: Rng + ?Sized>(
    lattice: &SpinLattice,
    rng: &mut R,
) -> Result<SpinConfiguration> {
    if lattice.boundary_y != Boundary::Open {
        return Err(Error::invalid(
            "boundary_y",
            "a line defect needs an open bottom row",
        ));
    }
    let mut config = sample_gauge_invariant(lattice, rng);
    for j in lattice.row_vertices(0).collect::<Vec<_>>() {
        config.spins[j][2] = -config.spins[j][2];
    }
    Ok(config)
}

/// Discrete Wigner phase-point sample around a `+-z` product state.
///
/// `sz` is kept; `sx` and `sy` are independent fair `+-1` draws, so sampled
/// vectors have length `sqrt(3)` and are evolved without renormalization.
pub fn sample_dtwa<R: Rng + ?Sized>(
    base: &SpinConfiguration,
    rng: &mut R,
) -> Result<SpinConfiguration> {
    if !base.is_z_product() {
        return Err(Error::invalid(
            "base",
            "discrete Wigner sampling needs a +-z product state",
        ));
    }
    let spins = base
        .spins
        .iter()
        .map(|s| {
            let x = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [x, y, s[2]]
        })
        .collect();
    Ok(SpinConfiguration { spins })
}

/// I.i.d. normal disorder with standard deviation `delta` on every vertex.
pub fn sample_disorder<R: Rng + ?Sized>(
    lattice: &SpinLattice,
    delta: f64,
    rng: &mut R,
) -> Result<DisorderField> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(
            "delta",
            "must be a finite non-negative number",
        ));
    }
    if delta == 0.0 {
        return Ok(DisorderField::zeros(lattice.n_matter()));
    }
    let normal = Normal::new(0.0, delta).map_err(|e| Error::invalid("delta", e.to_string()))?;
    Ok(DisorderField {
        delta_j: (0..lattice.n_matter())
            .map(|_| normal.sample(rng))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Variant;
    use crate::lattice::build_honeycomb;
    use crate::observables::gauss_law;

    fn torus(n: usize) -> SpinLattice {
        build_honeycomb(n, n, Boundary::Periodic, Boundary::Periodic).unwrap()
    }

    #[test]
    fn gauge_invariant_draws_satisfy_gauss_law() {
        let lattice = torus(3);
        let rngs = SeededRng::new(7);
        for n in 0..50 {
            let config = sample_gauge_invariant(&lattice, &mut rngs.stream(n));
            assert!(config.is_z_product());
            for j in 0..lattice.n_matter() {
                assert_eq!(gauss_law(&config, &lattice, Variant::WithMatter, j), 1.0);
            }
        }
    }

    #[test]
    fn all_links_up_forces_matter_down() {
        let lattice = torus(2);
        let nm = lattice.n_matter();
        let rngs = SeededRng::new(1);
        let mut found = false;
        for n in 0..20_000 {
            let c = sample_gauge_invariant(&lattice, &mut rngs.stream(n));
            if c.spins[nm..].iter().all(|s| s[2] == 1.0) {
                assert!(c.spins[..nm].iter().all(|s| s[2] == -1.0));
                found = true;
                break;
            }
        }
        assert!(found, "2^12 link sector should be hit within 20000 draws");
    }

    #[test]
    fn link_orientations_are_fair() {
        let lattice = torus(2);
        let nm = lattice.n_matter();
        let mut rng = SeededRng::new(11).stream(0);
        let draws = 10_000;
        let mut up = vec![0usize; lattice.n_links()];
        for _ in 0..draws {
            let c = sample_gauge_invariant(&lattice, &mut rng);
            for l in 0..lattice.n_links() {
                if c.spins[nm + l][2] > 0.0 {
                    up[l] += 1;
                }
            }
        }
        for count in up {
            let f = count as f64 / draws as f64;
            assert!((f - 0.5).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn no_matter_reference_and_parity() {
        let lattice = torus(2);
        let nm = lattice.n_matter();
        let mut rng = SeededRng::new(3).stream(0);
        let c = sample_gauge_invariant_no_matter(&lattice, &mut rng, 0).unwrap();
        assert!(c.spins[nm..].iter().all(|s| s[2] == -1.0));
        for n_mix in [1, 5, 40] {
            let c = sample_gauge_invariant_no_matter(&lattice, &mut rng, n_mix).unwrap();
            for links in &lattice.vertex_links {
                let excited = links.iter().filter(|&&l| c.spins[nm + l][2] > 0.0).count();
                assert_eq!(excited % 2, 0);
            }
        }
        assert!(sample_gauge_invariant_no_matter(&lattice, &mut rng, -1).is_err());
    }

    #[test]
    fn single_plaquette_flip_flips_six_links() {
        let lattice = torus(2);
        let nm = lattice.n_matter();
        let mut rng = SeededRng::new(5).stream(0);
        let c = sample_gauge_invariant_no_matter(&lattice, &mut rng, 1).unwrap();
        let flipped = c.spins[nm..].iter().filter(|s| s[2] > 0.0).count();
        assert_eq!(flipped, 6);
    }

    #[test]
    fn line_defect_sits_on_bottom_row() {
        let lattice = build_honeycomb(50, 6, Boundary::Periodic, Boundary::Open).unwrap();
        let mut rng = SeededRng::new(9).stream(0);
        let c = line_defect_state(&lattice, &mut rng).unwrap();
        let mut defects = 0;
        for j in 0..lattice.n_matter() {
            let g = gauss_law(&c, &lattice, Variant::WithMatter, j);
            let bottom = lattice.matter_sites[j].row == 0;
            assert_eq!(g, if bottom { -1.0 } else { 1.0 });
            defects += bottom as usize;
        }
        assert_eq!(defects, 100);
        assert!(line_defect_state(&torus(2), &mut rng).is_err());
    }

    #[test]
    fn dtwa_draws_keep_z_and_unit_transverse_moments() {
        let lattice = torus(2);
        let base = sample_gauge_invariant(&lattice, &mut SeededRng::new(2).stream(0));
        let mut rng = SeededRng::new(2).stream(1);
        let draws = 10_000;
        let mut mean_x = 0.0;
        let mut cov_xy = 0.0;
        for _ in 0..draws {
            let s = sample_dtwa(&base, &mut rng).unwrap();
            for (a, b) in s.spins.iter().zip(&base.spins) {
                assert_eq!(a[0] * a[0], 1.0);
                assert_eq!(a[1] * a[1], 1.0);
                assert_eq!(a[2], b[2]);
            }
            mean_x += s.spins[0][0];
            cov_xy += s.spins[0][0] * s.spins[0][1];
        }
        assert!((mean_x / draws as f64).abs() < 0.03);
        assert!((cov_xy / draws as f64).abs() < 0.03);
        let mut tilted = base.clone();
        tilted.spins[0] = [0.6, 0.0, 0.8];
        assert!(sample_dtwa(&tilted, &mut rng).is_err());
    }

    #[test]
    fn disorder_statistics_and_determinism() {
        let lattice = torus(20);
        let rngs = SeededRng::new(4);
        let zero = sample_disorder(&lattice, 0.0, &mut rngs.stream(0)).unwrap();
        assert!(zero.is_zero());
        let a = sample_disorder(&lattice, 0.1, &mut rngs.stream(1)).unwrap();
        let b = sample_disorder(&lattice, 0.1, &mut rngs.stream(1)).unwrap();
        assert_eq!(a, b);
        let n = a.delta_j.len() as f64;
        let mean = a.delta_j.iter().sum::<f64>() / n;
        let sd = (a.delta_j.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.08..=0.12).contains(&sd), "sd {sd}");
        assert!(sample_disorder(&lattice, -0.1, &mut rngs.stream(0)).is_err());
    }

    #[test]
    fn checkpoint_formats_round_trip() {
        let lattice = torus(2);
        let base = sample_gauge_invariant(&lattice, &mut SeededRng::new(8).stream(0));
        let c = sample_dtwa(&base, &mut SeededRng::new(8).stream(1)).unwrap();
        assert_eq!(SpinConfiguration::from_bytes(&c.to_bytes()).unwrap(), c);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(SpinConfiguration::read_csv(&buf[..]).unwrap(), c);
        assert!(SpinConfiguration::from_bytes(b"garbage").is_err());
    }
}
