//! Toy teacher/student pairs that make the forward/reverse gradient
//! asymmetry visible index by index.
//!
//! A scenario is a single pair of distributions over an integer support,
//! each index labeled by which side is heavier. The gradient profile then
//! tabulates |grad FKL| = p/q against |grad RKL| = |1 - ln(p/q)| per index:
//! wherever the teacher out-weighs the student, forward KL fires harder,
//! and vice versa — with no exceptions, because the magnitude comparison
//! is a theorem about the scalar ratio, not a property of the shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dist::VocabDist;
use crate::error::{Error, Result};
use crate::gradients::{grad_fkl_q, grad_rkl_q};

/// Tolerance for calling two probabilities equal at one index.
pub const REGION_TOL: f64 = 1e-12;

/// Which side is heavier at an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    PGtQ,
    QGtP,
    Equal,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::PGtQ => "P_GT_Q",
            Region::QGtP => "Q_GT_P",
            Region::Equal => "EQUAL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "P_GT_Q" => Ok(Region::PGtQ),
            "Q_GT_P" => Ok(Region::QGtP),
            "EQUAL" => Ok(Region::Equal),
            _ => Err(Error::InvalidInput(format!("unknown region label {s:?}"))),
        }
    }
}

/// Which gradient dominates at an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominant {
    Fkl,
    Rkl,
    Tie,
}

impl Dominant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dominant::Fkl => "FKL",
            Dominant::Rkl => "RKL",
            Dominant::Tie => "TIE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "FKL" => Ok(Dominant::Fkl),
            "RKL" => Ok(Dominant::Rkl),
            "TIE" => Ok(Dominant::Tie),
            _ => Err(Error::InvalidInput(format!("unknown dominance label {s:?}"))),
        }
    }
}

/// The scenario families. Shapes are parameterized and seeded; the claim
/// they exist to demonstrate (region dominance) holds for any valid pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    BimodalVsUnimodal,
    ShiftedGaussians,
    RandomDirichlet,
}

impl ToyKind {
    pub const ALL: [ToyKind; 3] = [
        ToyKind::BimodalVsUnimodal,
        ToyKind::ShiftedGaussians,
        ToyKind::RandomDirichlet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToyKind::BimodalVsUnimodal => "bimodal_vs_unimodal",
            ToyKind::ShiftedGaussians => "shifted_gaussians",
            ToyKind::RandomDirichlet => "random_dirichlet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "bimodal_vs_unimodal" => Ok(ToyKind::BimodalVsUnimodal),
            "shifted_gaussians" => Ok(ToyKind::ShiftedGaussians),
            "random_dirichlet" => Ok(ToyKind::RandomDirichlet),
            other => Err(Error::InvalidParameter(format!(
                "unknown toy scenario {other:?}; supported: bimodal_vs_unimodal, \
                 shifted_gaussians, random_dirichlet"
            ))),
        }
    }
}

/// A teacher/student pair with per-index region labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScenario {
    pub p: VocabDist,
    pub q: VocabDist,
    pub regions: Vec<Region>,
}

impl ToyScenario {
    /// Label every index by comparing `p_i` and `q_i` at [`REGION_TOL`].
    pub fn new(p: VocabDist, q: VocabDist) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidInput(format!(
                "vocabulary sizes differ: {} vs {}",
                p.len(),
                q.len()
            )));
        }
        let regions = p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(&a, &b)| {
                if a - b > REGION_TOL {
                    Region::PGtQ
                } else if b - a > REGION_TOL {
                    Region::QGtP
                } else {
                    Region::Equal
                }
            })
            .collect();
        Ok(Self { p, q, regions })
    }

    fn has_both_regions(&self) -> bool {
        self.regions.contains(&Region::PGtQ) && self.regions.contains(&Region::QGtP)
    }
}

/// Discretized Gaussian bump over indices `0..v`.
fn bump(v: usize, center: f64, width: f64) -> Vec<f64> {
    (0..v)
        .map(|i| {
            let z = (i as f64 - center) / width;
            (-0.5 * z * z).exp()
        })
        .collect()
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Build a seeded scenario with both regions guaranteed non-empty.
///
/// The families:
/// - `bimodal_vs_unimodal`: two-bump teacher vs a broad one-bump student
///   sitting between the teacher's modes;
/// - `shifted_gaussians`: equal-width bumps at different centers;
/// - `random_dirichlet`: independent flat-Dirichlet draws.
///
/// Centers and widths are jittered from the seed. Supports with fewer than
/// 4 indices cannot reliably host both regions and are rejected.
pub fn make_toy(kind: ToyKind, v: usize, seed: u64) -> Result<ToyScenario> {
    if v < 4 {
        return Err(Error::InvalidParameter(format!(
            "toy scenarios need a support of at least 4 indices, got {v}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // A fresh draw from the same stream on the (practically unreachable)
    // chance a jitter lands on a pair with an empty region.
    for _ in 0..16 {
        let scenario = draw_scenario(kind, v, &mut rng)?;
        if scenario.has_both_regions() {
            return Ok(scenario);
        }
    }
    Err(Error::DegenerateScenario(format!(
        "could not realize both regions for {} at V={v}",
        kind.as_str()
    )))
}

fn draw_scenario(kind: ToyKind, v: usize, rng: &mut ChaCha12Rng) -> Result<ToyScenario> {
    let vf = v as f64;
    let (p, q) = match kind {
        ToyKind::BimodalVsUnimodal => {
            let c1 = vf * rng.random_range(0.18..0.30);
            let c2 = vf * rng.random_range(0.70..0.82);
            let w = vf * rng.random_range(0.05..0.09);
            let mut pw = bump(v, c1, w);
            add_into(&mut pw, &bump(v, c2, w));
            let qc = vf * rng.random_range(0.45..0.55);
            let qw = vf * rng.random_range(0.16..0.26);
            (VocabDist::from_weights(&pw)?, VocabDist::from_weights(&bump(v, qc, qw))?)
        }
        ToyKind::ShiftedGaussians => {
            let w = vf * rng.random_range(0.10..0.16);
            let pc = vf * rng.random_range(0.28..0.38);
            let qc = vf * rng.random_range(0.62..0.72);
            (
                VocabDist::from_weights(&bump(v, pc, w))?,
                VocabDist::from_weights(&bump(v, qc, w))?,
            )
        }
        ToyKind::RandomDirichlet => (VocabDist::random(rng, v)?, VocabDist::random(rng, v)?),
    };
    ToyScenario::new(p, q)
}

/// One line of the gradient profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub index: usize,
    pub p: f64,
    pub q: f64,
    pub region: Region,
    pub grad_fkl_abs: f64,
    pub grad_rkl_abs: f64,
    pub dominant: Dominant,
}

/// Tabulate per-index gradient magnitudes and which divergence dominates.
///
/// Indexes in the `EQUAL` region are marked as ties outright (both
/// magnitudes are 1 there); elsewhere dominance is a strict magnitude
/// comparison. Requires a scenario where both strict regions occur,
/// otherwise there is nothing to analyze.
pub fn gradient_profile(s: &ToyScenario) -> Result<Vec<ProfileRow>> {
    if !s.has_both_regions() {
        return Err(Error::DegenerateScenario(
            "profile requires indices on both sides (p > q and q > p)".into(),
        ));
    }
    Ok((0..s.p.len())
        .map(|i| {
            let (pi, qi) = (s.p.prob(i), s.q.prob(i));
            let gf = grad_fkl_q(pi, qi).abs();
            let gr = grad_rkl_q(pi, qi).abs();
            let dominant = match s.regions[i] {
                Region::Equal => Dominant::Tie,
                _ => {
                    if gf > gr {
                        Dominant::Fkl
                    } else if gr > gf {
                        Dominant::Rkl
                    } else {
                        Dominant::Tie
                    }
                }
            };
            ProfileRow {
                index: i,
                p: pi,
                q: qi,
                region: s.regions[i],
                grad_fkl_abs: gf,
                grad_rkl_abs: gr,
                dominant,
            }
        })
        .collect())
}

pub const PROFILE_HEADER: &str = "index,p,q,region,grad_fkl_abs,grad_rkl_abs,dominant";

/// Serialize a profile; floats use shortest-round-trip formatting so
/// parsing the output reproduces the table bit for bit.
pub fn profile_to_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index,
            r.p,
            r.q,
            r.region.as_str(),
            r.grad_fkl_abs,
            r.grad_rkl_abs,
            r.dominant.as_str()
        ));
    }
    out
}

/// Parse a profile CSV produced by [`profile_to_csv`].
pub fn profile_from_csv(text: &str) -> Result<Vec<ProfileRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PROFILE_HEADER => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "bad profile header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidInput(format!(
                "profile line {} has {} fields, expected 7",
                n + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("bad number {s:?} on line {}", n + 2)))
        };
        rows.push(ProfileRow {
            index: fields[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad index {:?}", fields[0])))?,
            p: num(fields[1])?,
            q: num(fields[2])?,
            region: Region::parse(fields[3])?,
            grad_fkl_abs: num(fields[4])?,
            grad_rkl_abs: num(fields[5])?,
            dominant: Dominant::parse(fields[6])?,
        });
    }
    Ok(rows)
}
