//! Statevector simulation of the variational circuits used inside the hybrid
//! policy: Rx angle encoding, Rx/Rz rotation layers with CNOT rings, exact
//! Pauli-Z readout and parameter-shift gradients.
//!
//! Qubit `i` corresponds to bit `i` of the basis-state index.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Largest register we are willing to allocate (2^24 amplitudes, 256 MiB).
pub const MAX_QUBITS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("register of {0} qubits is outside 1..={MAX_QUBITS}")]
    Capacity(usize),
    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    Index { index: usize, n_qubits: usize },
    #[error("CNOT control and target are both qubit {0}")]
    SameWire(usize),
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid ansatz: {0}")]
    Ansatz(String),
}

pub type Result<T> = std::result::Result<T, QsimError>;

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(QsimError::Shape {
            what,
            expected,
            got,
        })
    }
}

/// Pure state of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// The all-zero computational basis state.
    pub fn new(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(QsimError::Capacity(n_qubits));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(QsimError::Index { index, n_qubits });
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, index: usize) -> Result<()> {
        if index < self.n_qubits {
            Ok(())
        } else {
            Err(QsimError::Index {
                index,
                n_qubits: self.n_qubits,
            })
        }
    }

    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        match *gate {
            GateOp::Rx { target, angle } => {
                self.check_qubit(target)?;
                self.rx(target, angle);
            }
            GateOp::Rz { target, angle } => {
                self.check_qubit(target)?;
                self.rz(target, angle);
            }
            GateOp::Cnot { control, target } => {
                self.check_qubit(control)?;
                self.check_qubit(target)?;
                if control == target {
                    return Err(QsimError::SameWire(control));
                }
                self.cnot(control, target);
            }
        }
        Ok(())
    }

    fn rx(&mut self, target: usize, angle: f64) {
        let (s, c) = (angle / 2.0).sin_cos();
        let bit = 1usize << target;
        for block in self.amplitudes.chunks_exact_mut(bit << 1) {
            let (lo, hi) = block.split_at_mut(bit);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                // (c, -i s; -i s, c)
                *a0 = Complex64::new(c * x0.re + s * x1.im, c * x0.im - s * x1.re);
                *a1 = Complex64::new(s * x0.im + c * x1.re, c * x1.im - s * x0.re);
            }
        }
    }

    fn rz(&mut self, target: usize, angle: f64) {
        let (s, c) = (angle / 2.0).sin_cos();
        let phase0 = Complex64::new(c, -s);
        let phase1 = Complex64::new(c, s);
        let bit = 1usize << target;
        for block in self.amplitudes.chunks_exact_mut(bit << 1) {
            let (lo, hi) = block.split_at_mut(bit);
            lo.iter_mut().for_each(|a| *a *= phase0);
            hi.iter_mut().for_each(|a| *a *= phase1);
        }
    }

    fn cnot(&mut self, control: usize, target: usize) {
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amplitudes.swap(i, i | tbit);
            }
        }
    }

    /// Same as [`StateVector::apply`] for gates already known to fit.
    fn apply_unchecked(&mut self, gate: &GateOp) {
        match *gate {
            GateOp::Rx { target, angle } => self.rx(target, angle),
            GateOp::Rz { target, angle } => self.rz(target, angle),
            GateOp::Cnot { control, target } => self.cnot(control, target),
        }
    }

    /// Applies `Rx(features[i])` to every qubit `i`.
    pub fn encode_angles(&mut self, features: &[f64]) -> Result<()> {
        check_len("encoding features", self.n_qubits, features.len())?;
        for (q, &angle) in features.iter().enumerate() {
            self.rx(q, angle);
        }
        Ok(())
    }

    /// Exact `⟨Z_i⟩` for every qubit.
    pub fn expectations_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        for (b, amp) in self.amplitudes.iter().enumerate() {
            let p = amp.norm_sqr();
            for (q, z) in out.iter_mut().enumerate() {
                if b >> q & 1 == 0 {
                    *z += p;
                } else {
                    *z -= p;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    Rx { target: usize, angle: f64 },
    Rz { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    /// One Rx per qubit, nearest-neighbour CNOT ring.
    Basic,
    /// Rx then Rz per qubit, CNOT ring whose reach cycles with the layer.
    Strong,
}

impl Entanglement {
    pub fn rotations_per_qubit(self) -> usize {
        match self {
            Entanglement::Basic => 1,
            Entanglement::Strong => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzConfig {
    pub n_qubits: usize,
    pub n_layers: usize,
    pub entanglement: Entanglement,
}

impl AnsatzConfig {
    pub fn new(n_qubits: usize, n_layers: usize, entanglement: Entanglement) -> Result<Self> {
        let cfg = Self {
            n_qubits,
            n_layers,
            entanglement,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 2 {
            return Err(QsimError::Ansatz(format!(
                "entangling layers need at least 2 qubits, got {}",
                self.n_qubits
            )));
        }
        if self.n_qubits > MAX_QUBITS {
            return Err(QsimError::Capacity(self.n_qubits));
        }
        if self.n_layers == 0 {
            return Err(QsimError::Ansatz("at least one layer is required".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.n_qubits * self.n_layers * self.entanglement.rotations_per_qubit()
    }

    /// CNOT reach used by layer `layer`.
    pub fn ring_range(&self, layer: usize) -> usize {
        match self.entanglement {
            Entanglement::Basic => 1,
            Entanglement::Strong => layer % (self.n_qubits - 1) + 1,
        }
    }

    /// Gate list for the trainable block. Parameters are consumed layer-major,
    /// then by qubit, then by rotation kind (Rx before Rz).
    pub fn build(&self, params: &[f64]) -> Result<Vec<GateOp>> {
        self.validate()?;
        check_len("ansatz parameters", self.param_count(), params.len())?;
        let n = self.n_qubits;
        let per = self.entanglement.rotations_per_qubit();
        let mut gates = Vec::with_capacity(self.n_layers * n * (per + 1));
        let mut p = params.iter().copied();
        for layer in 0..self.n_layers {
            for q in 0..n {
                gates.push(GateOp::Rx {
                    target: q,
                    angle: p.next().unwrap(),
                });
                if self.entanglement == Entanglement::Strong {
                    gates.push(GateOp::Rz {
                        target: q,
                        angle: p.next().unwrap(),
                    });
                }
            }
            let r = self.ring_range(layer);
            for q in 0..n {
                gates.push(GateOp::Cnot {
                    control: q,
                    target: (q + r) % n,
                });
            }
        }
        Ok(gates)
    }
}

/// Encode, apply the ansatz, read out `⟨Z⟩` on every wire.
pub fn run_vqc(features: &[f64], params: &[f64], config: &AnsatzConfig) -> Result<Vec<f64>> {
    let gates = config.build(params)?;
    let mut state = StateVector::new(config.n_qubits)?;
    state.encode_angles(features)?;
    gates.iter().for_each(|g| state.apply_unchecked(g));
    Ok(state.expectations_z())
}

/// Jacobians of the circuit outputs, computed with the two-term shift rule.
#[derive(Debug, Clone, PartialEq)]
pub struct VqcJacobian {
    /// `params[k][i] = ∂⟨Z_i⟩/∂θ_k`
    pub params: Vec<Vec<f64>>,
    /// `inputs[j][i] = ∂⟨Z_i⟩/∂x_j`
    pub inputs: Vec<Vec<f64>>,
}

impl VqcJacobian {
    /// `upstreamᵀ J` for the parameter block.
    pub fn contract_params(&self, upstream: &[f64]) -> Vec<f64> {
        contract(&self.params, upstream)
    }

    pub fn contract_inputs(&self, upstream: &[f64]) -> Vec<f64> {
        contract(&self.inputs, upstream)
    }
}

fn contract(rows: &[Vec<f64>], upstream: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|row| row.iter().zip(upstream).map(|(d, u)| d * u).sum())
        .collect()
}

fn shifted_difference(
    values: &mut [f64],
    k: usize,
    mut eval: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let orig = values[k];
    values[k] = orig + FRAC_PI_2;
    let plus = eval(values)?;
    values[k] = orig - FRAC_PI_2;
    let minus = eval(values)?;
    values[k] = orig;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / 2.0)
        .collect())
}

/// Full parameter-shift Jacobian, with respect to both ansatz angles and
/// encoding angles. Every encoding angle enters through exactly one Rx gate,
/// so the same two-term rule applies to it.
pub fn vqc_jacobian(
    features: &[f64],
    params: &[f64],
    config: &AnsatzConfig,
) -> Result<VqcJacobian> {
    check_len("encoding features", config.n_qubits, features.len())?;
    let mut gates: Vec<GateOp> = features
        .iter()
        .enumerate()
        .map(|(target, &angle)| GateOp::Rx { target, angle })
        .collect();
    gates.extend(config.build(params)?);

    // Rotations appear in the gate list in variable order (inputs first, then
    // ansatz angles), so one sweep with a running prefix state covers them all.
    let mut prefix = StateVector::new(config.n_qubits)?;
    let mut rows = Vec::with_capacity(features.len() + params.len());
    for (g, gate) in gates.iter().enumerate() {
        if let GateOp::Rx { angle, .. } | GateOp::Rz { angle, .. } = *gate {
            let run = |delta: f64| {
                let mut state = prefix.clone();
                state.apply_unchecked(&with_angle(gate, angle + delta));
                gates[g + 1..].iter().for_each(|h| state.apply_unchecked(h));
                state.expectations_z()
            };
            let plus = run(FRAC_PI_2);
            let minus = run(-FRAC_PI_2);
            rows.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(p, m)| (p - m) / 2.0)
                    .collect(),
            );
        }
        prefix.apply_unchecked(gate);
    }
    let params_rows = rows.split_off(features.len());
    Ok(VqcJacobian {
        params: params_rows,
        inputs: rows,
    })
}

fn with_angle(gate: &GateOp, angle: f64) -> GateOp {
    match *gate {
        GateOp::Rx { target, .. } => GateOp::Rx { target, angle },
        GateOp::Rz { target, .. } => GateOp::Rz { target, angle },
        cnot => cnot,
    }
}

/// `upstreamᵀ · ∂⟨Z⟩/∂θ` for the ansatz angles.
pub fn parameter_shift_gradient(
    features: &[f64],
    params: &[f64],
    config: &AnsatzConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_len("upstream gradient", config.n_qubits, upstream.len())?;
    check_len("encoding features", config.n_qubits, features.len())?;
    check_len("ansatz parameters", config.param_count(), params.len())?;
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let d = shifted_difference(&mut p, k, |pp| run_vqc(features, pp, config))?;
        grad.push(d.iter().zip(upstream).map(|(a, b)| a * b).sum());
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn new_state_is_all_zero_basis() {
        let s = StateVector::new(1).unwrap();
        assert_eq!(
            s.amplitudes(),
            &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
        );
        let s = StateVector::new(2).unwrap();
        assert_eq!(s.amplitudes().len(), 4);
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert!(s.amplitudes()[1..]
            .iter()
            .all(|a| *a == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn register_size_guard() {
        assert_eq!(StateVector::new(25), Err(QsimError::Capacity(25)));
        assert_eq!(StateVector::new(0), Err(QsimError::Capacity(0)));
    }

    #[test]
    fn rx_pi_flips_with_phase() {
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::Rx {
            target: 0,
            angle: PI,
        })
        .unwrap();
        assert!(close(s.amplitudes()[0], 0.0, 0.0));
        assert!(close(s.amplitudes()[1], 0.0, -1.0));
    }

    #[test]
    fn cnot_truth_table() {
        // |10⟩: qubit 0 set, qubit 1 clear.
        let mut s = StateVector::basis(2, 0b01).unwrap();
        s.apply(&GateOp::Cnot {
            control: 0,
            target: 1,
        })
        .unwrap();
        assert_eq!(s, StateVector::basis(2, 0b11).unwrap());
        let mut s = StateVector::basis(2, 0b10).unwrap();
        s.apply(&GateOp::Cnot {
            control: 0,
            target: 1,
        })
        .unwrap();
        assert_eq!(s, StateVector::basis(2, 0b10).unwrap());
    }

    #[test]
    fn rz_is_a_phase_on_zero() {
        let theta = 0.7;
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::Rz {
            target: 0,
            angle: theta,
        })
        .unwrap();
        let a = s.amplitudes()[0];
        assert!(close(a, (theta / 2.0).cos(), -(theta / 2.0).sin()));
        assert!((a.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_gate_indices() {
        let mut s = StateVector::new(2).unwrap();
        assert!(matches!(
            s.apply(&GateOp::Rx {
                target: 2,
                angle: 0.1
            }),
            Err(QsimError::Index { index: 2, .. })
        ));
        assert_eq!(
            s.apply(&GateOp::Cnot {
                control: 1,
                target: 1
            }),
            Err(QsimError::SameWire(1))
        );
    }

    #[test]
    fn encoding() {
        let mut s = StateVector::new(3).unwrap();
        s.encode_angles(&[0.0; 3]).unwrap();
        assert_eq!(s, StateVector::new(3).unwrap());

        let mut s = StateVector::new(1).unwrap();
        s.encode_angles(&[FRAC_PI_2]).unwrap();
        assert!(s.expectations_z()[0].abs() < 1e-15);

        let mut s = StateVector::new(4).unwrap();
        assert!(matches!(
            s.encode_angles(&[0.1; 3]),
            Err(QsimError::Shape {
                expected: 4,
                got: 3,
                ..
            })
        ));
    }

    #[test]
    fn expectation_values() {
        assert_eq!(StateVector::new(3).unwrap().expectations_z(), vec![1.0; 3]);
        assert_eq!(
            StateVector::basis(1, 1).unwrap().expectations_z(),
            vec![-1.0]
        );
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::Rx {
            target: 0,
            angle: PI / 3.0,
        })
        .unwrap();
        assert!((s.expectations_z()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ansatz_shapes() {
        let strong = AnsatzConfig::new(4, 3, Entanglement::Strong).unwrap();
        assert_eq!(strong.param_count(), 24);
        let gates = strong.build(&[0.0; 24]).unwrap();
        let ranges: Vec<usize> = gates
            .chunks(4 * 2 + 4)
            .map(|layer| match layer[8] {
                GateOp::Cnot { control, target } => (target + 4 - control) % 4,
                other => panic!("expected CNOT, got {other:?}"),
            })
            .collect();
        assert_eq!(ranges, vec![1, 2, 3]);

        let basic = AnsatzConfig::new(4, 3, Entanglement::Basic).unwrap();
        assert_eq!(basic.param_count(), 12);
        let gates = basic.build(&[0.0; 12]).unwrap();
        for g in gates {
            if let GateOp::Cnot { control, target } = g {
                assert_eq!(target, (control + 1) % 4);
            }
        }

        assert_eq!(
            AnsatzConfig::new(13, 9, Entanglement::Strong)
                .unwrap()
                .param_count(),
            234
        );
        assert!(matches!(
            strong.build(&[0.0; 23]),
            Err(QsimError::Shape {
                expected: 24,
                got: 23,
                ..
            })
        ));
        assert!(AnsatzConfig::new(1, 2, Entanglement::Basic).is_err());
        assert!(AnsatzConfig::new(3, 0, Entanglement::Basic).is_err());
    }

    #[test]
    fn parameter_ordering_is_layer_qubit_kind() {
        let cfg = AnsatzConfig::new(2, 2, Entanglement::Strong).unwrap();
        let params: Vec<f64> = (0..8).map(f64::from).collect();
        let angles: Vec<(char, usize, f64)> = cfg
            .build(&params)
            .unwrap()
            .into_iter()
            .filter_map(|g| match g {
                GateOp::Rx { target, angle } => Some(('x', target, angle)),
                GateOp::Rz { target, angle } => Some(('z', target, angle)),
                GateOp::Cnot { .. } => None,
            })
            .collect();
        assert_eq!(
            angles,
            vec![
                ('x', 0, 0.0),
                ('z', 0, 1.0),
                ('x', 1, 2.0),
                ('z', 1, 3.0),
                ('x', 0, 4.0),
                ('z', 0, 5.0),
                ('x', 1, 6.0),
                ('z', 1, 7.0),
            ]
        );
    }

    #[test]
    fn identity_circuit_reads_all_ones() {
        let cfg = AnsatzConfig::new(3, 2, Entanglement::Strong).unwrap();
        let out = run_vqc(&[0.0; 3], &[0.0; 12], &cfg).unwrap();
        assert_eq!(out, vec![1.0; 3]);
    }

    #[test]
    fn single_rotation_shift_rule() {
        // A 1-wire circuit is just Rx(θ); ⟨Z⟩ = cos θ.
        let theta = PI / 3.0;
        let mut s = StateVector::new(1).unwrap();
        let mut eval = |v: &[f64]| -> Result<Vec<f64>> {
            s = StateVector::new(1).unwrap();
            s.apply(&GateOp::Rx {
                target: 0,
                angle: v[0],
            })?;
            Ok(s.expectations_z())
        };
        let d = shifted_difference(&mut [theta], 0, &mut eval).unwrap();
        assert!((d[0] + 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let cfg = AnsatzConfig::new(3, 2, Entanglement::Basic).unwrap();
        let g = parameter_shift_gradient(&[0.3, -1.0, 2.0], &[0.5; 6], &cfg, &[0.0; 3]).unwrap();
        assert_eq!(g, vec![0.0; 6]);
        assert!(parameter_shift_gradient(&[0.3, -1.0, 2.0], &[0.5; 6], &cfg, &[0.0; 2]).is_err());
    }

    #[test]
    fn jacobian_contraction_matches_direct_gradient() {
        let cfg = AnsatzConfig::new(3, 2, Entanglement::Strong).unwrap();
        let x = [0.3, -1.1, 2.0];
        let p: Vec<f64> = (0..12).map(|k| 0.37 * k as f64 - 1.0).collect();
        let up = [0.2, -0.7, 1.3];
        let jac = vqc_jacobian(&x, &p, &cfg).unwrap();
        let direct = parameter_shift_gradient(&x, &p, &cfg, &up).unwrap();
        for (a, b) in jac.contract_params(&up).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
