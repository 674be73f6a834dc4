//! Target gates and their fidelities.
//!
//! Levels `+3/2, +1/2, -1/2, -3/2` of the hat basis carry the logical
//! states `|00>, |01>, |10>, |11>`. A CNOT is named by its control qubit:
//! `CNOT_a` flips qubit b when a = 1 (swaps levels 3 and 4), `CNOT_b` flips
//! qubit a when b = 1 (swaps levels 2 and 4).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::dynamics::M4;
use crate::linalg::{c, hs_overlap, kron, Operator, C64};
use crate::spin::DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    Identity,
    CnotA,
    CnotB,
    P12,
    P13,
    P24,
    Hab,
}

impl Gate {
    pub const OPTIMIZED: [Gate; 5] = [Gate::CnotA, Gate::CnotB, Gate::P12, Gate::P13, Gate::Hab];

    pub fn label(self) -> &'static str {
        match self {
            Gate::Identity => "identity",
            Gate::CnotA => "CNOT_a",
            Gate::CnotB => "CNOT_b",
            Gate::P12 => "P12",
            Gate::P13 => "P13",
            Gate::P24 => "P24",
            Gate::Hab => "H_ab",
        }
    }

    pub fn target(self) -> GateTarget {
        let swap = |a: usize, b: usize| {
            let mut p = [0, 1, 2, 3];
            p.swap(a, b);
            p
        };
        match self {
            Gate::Identity => GateTarget::unitary(self.label(), Operator::identity(DIM)),
            Gate::CnotA => GateTarget::unitary(self.label(), permutation_matrix(&swap(2, 3))),
            Gate::CnotB => GateTarget::unitary(self.label(), permutation_matrix(&swap(1, 3))),
            Gate::P12 => GateTarget::permutation(self.label(), swap(0, 1)),
            Gate::P13 => GateTarget::permutation(self.label(), swap(0, 2)),
            Gate::P24 => GateTarget::permutation(self.label(), swap(1, 3)),
            Gate::Hab => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                let hd = Operator::from_real_rows(2, &[r, r, r, -r]).expect("2x2");
                GateTarget::unitary(self.label(), kron(&hd, &hd).expect("qubit operators"))
            }
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "identity" | "id" | "1" => Gate::Identity,
            "cnota" => Gate::CnotA,
            "cnotb" => Gate::CnotB,
            "p12" => Gate::P12,
            "p13" => Gate::P13,
            "p24" => Gate::P24,
            "hab" | "hadamard" => Gate::Hab,
            _ => return Err(Error::UnknownGate(s.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind {
    /// Full unitary, matched up to a global phase.
    Unitary(Operator),
    /// Population map `level i -> perm[i]`, any diagonal phases allowed.
    Permutation([usize; 4]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateTarget {
    pub label: String,
    pub kind: TargetKind,
}

impl GateTarget {
    pub fn unitary(label: impl Into<String>, matrix: Operator) -> Self {
        Self {
            label: label.into(),
            kind: TargetKind::Unitary(matrix),
        }
    }

    pub fn permutation(label: impl Into<String>, perm: [usize; 4]) -> Self {
        Self {
            label: label.into(),
            kind: TargetKind::Permutation(perm),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            TargetKind::Unitary(u) => {
                if u.dim() != DIM {
                    return Err(Error::DimensionMismatch {
                        expected: DIM,
                        found: u.dim(),
                    });
                }
                if !u.is_unitary(1e-12) {
                    return Err(Error::InvalidTarget(format!("{} is not unitary", self.label)));
                }
            }
            TargetKind::Permutation(p) => {
                let mut seen = [false; 4];
                for &k in p {
                    if k >= 4 || seen[k] {
                        return Err(Error::InvalidTarget(format!("{} is not a bijection", self.label)));
                    }
                    seen[k] = true;
                }
            }
        }
        Ok(())
    }

    /// Exact operator realizing the target; permutations get zero phases.
    pub fn matrix(&self) -> Operator {
        match &self.kind {
            TargetKind::Unitary(u) => u.clone(),
            TargetKind::Permutation(p) => permutation_matrix(p),
        }
    }

    pub fn fidelity(&self, u: &Operator) -> f64 {
        match &self.kind {
            TargetKind::Unitary(t) => gate_fidelity(u, t),
            TargetKind::Permutation(p) => permutation_fidelity(u, p),
        }
    }

    /// Fidelity and the matrix `G` with `dF = Re Tr(G dU)`.
    pub(crate) fn fidelity_cogradient4(&self, u: &M4) -> (f64, M4) {
        let mut g = M4::zeros();
        match &self.kind {
            TargetKind::Unitary(t) => {
                let d2 = (DIM * DIM) as f64;
                let mut o = C64::new(0.0, 0.0);
                for i in 0..DIM {
                    for j in 0..DIM {
                        o += t.get(i, j).conj() * u[(i, j)];
                    }
                }
                for i in 0..DIM {
                    for j in 0..DIM {
                        g[(j, i)] = o.conj() * t.get(i, j).conj() * (2.0 / d2);
                    }
                }
                (o.norm_sqr() / d2, g)
            }
            TargetKind::Permutation(p) => {
                let mut f = 0.0;
                for (i, &j) in p.iter().enumerate() {
                    f += u[(j, i)].norm_sqr();
                    g[(i, j)] = u[(j, i)].conj() * (2.0 / DIM as f64);
                }
                (f / DIM as f64, g)
            }
        }
    }
}

/// The five optimized gates.
pub fn target_unitaries() -> Vec<GateTarget> {
    Gate::OPTIMIZED.iter().map(|g| g.target()).collect()
}

/// Matrix sending basis state `i` to `perm[i]`.
pub fn permutation_matrix(perm: &[usize; 4]) -> Operator {
    let mut m = Operator::zeros(DIM);
    for (i, &j) in perm.iter().enumerate() {
        m.set(j, i, c(1.0));
    }
    m
}

/// `|Tr(T† U)|² / 16`.
pub fn gate_fidelity(u: &Operator, target: &Operator) -> f64 {
    let d = DIM as f64;
    hs_overlap(target, u).map(|o| o.norm_sqr() / (d * d)).unwrap_or(0.0)
}

/// `(1/4) Σ_i |<π(i)|U|i>|²`.
pub fn permutation_fidelity(u: &Operator, perm: &[usize; 4]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| u.get(j, i).norm_sqr()).sum::<f64>() / DIM as f64
}

/// Level populations after applying a permutation.
pub fn permute_populations(p: [f64; 4], perm: &[usize; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, &j) in perm.iter().enumerate() {
        out[j] = p[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perm_of(g: Gate) -> [usize; 4] {
        let m = g.target().matrix();
        let mut p = [0; 4];
        for i in 0..4 {
            p[i] = (0..4).find(|&j| m.get(j, i).norm() > 0.5).unwrap();
        }
        p
    }

    #[test]
    fn all_targets_valid() {
        for g in [Gate::Identity, Gate::CnotA, Gate::CnotB, Gate::P12, Gate::P13, Gate::P24, Gate::Hab] {
            g.target().validate().unwrap();
        }
        assert_eq!(target_unitaries().len(), 5);
        assert!(GateTarget::permutation("bad", [0, 0, 1, 2]).validate().is_err());
    }

    #[test]
    fn involutions() {
        for g in [Gate::CnotA, Gate::CnotB, Gate::Hab] {
            let m = g.target().matrix();
            assert!((&(&m * &m) - &Operator::identity(4)).max_norm() < 1e-15, "{g}");
        }
    }

    #[test]
    fn cnot_truth_tables() {
        // control a is the first qubit: |10> -> |11>
        assert_eq!(perm_of(Gate::CnotA), [0, 1, 3, 2]);
        // control b is the second qubit: |01> -> |11>
        assert_eq!(perm_of(Gate::CnotB), [0, 3, 2, 1]);
        assert_eq!(perm_of(Gate::P24), perm_of(Gate::CnotB));
    }

    #[test]
    fn operator_sum_gives_pseudo_pure_level_one() {
        let eq = [1.0, -1.0, -1.0, 1.0];
        let mut sum = eq;
        for g in [Gate::CnotA, Gate::CnotB] {
            let p = permute_populations(eq, &perm_of(g));
            for k in 0..4 {
                sum[k] += p[k];
            }
        }
        assert_eq!(sum, [3.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn fidelity_examples() {
        let t = Gate::CnotA.target();
        let m = t.matrix();
        assert!((t.fidelity(&m) - 1.0).abs() < 1e-15);
        let shifted = m.scale_complex(C64::from_polar(1.0, std::f64::consts::PI / 7.0));
        assert!((t.fidelity(&shifted) - 1.0).abs() < 1e-15);
        assert!((t.fidelity(&Operator::identity(4)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn permutation_fidelity_examples() {
        let t = Gate::P12.target();
        let p = t.matrix();
        assert!((t.fidelity(&p) - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phases: Vec<C64> = (0..4).map(|_| C64::from_polar(1.0, rng.gen_range(0.0..6.3))).collect();
        let u = &p * &Operator::diagonal(&phases);
        assert!((t.fidelity(&u) - 1.0).abs() < 1e-14);
        assert!((t.fidelity(&Operator::identity(4)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gate_fidelity_global_phase_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Gate::Hab.target().matrix();
        let u = Gate::CnotB.target().matrix();
        let base = gate_fidelity(&u, &h);
        for _ in 0..20 {
            let a = C64::from_polar(1.0, rng.gen_range(0.0..6.3));
            let b = C64::from_polar(1.0, rng.gen_range(0.0..6.3));
            let f = gate_fidelity(&u.scale_complex(a), &h.scale_complex(b));
            assert!((f - base).abs() < 1e-14);
        }
    }

    #[test]
    fn parses_labels() {
        assert_eq!("CNOT_a".parse::<Gate>().unwrap(), Gate::CnotA);
        assert_eq!("cnot-b".parse::<Gate>().unwrap(), Gate::CnotB);
        assert_eq!("H_ab".parse::<Gate>().unwrap(), Gate::Hab);
        assert!(matches!("toffoli".parse::<Gate>(), Err(Error::UnknownGate(_))));
    }
}
