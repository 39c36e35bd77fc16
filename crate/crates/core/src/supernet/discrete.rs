use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Samples, Supernet, SupernetState, STEM_AND_HEAD, TENSORS_PER_OP};
use super::space::DiscreteArch;
use super::SupernetError;
use crate::autodiff::{Tape, Tensor, Var};

/// Standalone network keeping only the chosen op on every edge.
///
/// Tensors use the supernet layout so weights can be shared with a
/// [`Supernet`]; slots of ops that were not chosen are never read.
#[derive(Clone, Debug)]
pub struct DiscreteNet {
    net: Supernet,
    arch: DiscreteArch,
    state: SupernetState,
    used: Vec<bool>,
}

/// Output of one pass through a [`DiscreteNet`].
#[derive(Clone, Debug)]
pub struct DiscreteEval {
    pub logits: Tensor,
    pub loss: f64,
    /// Present when gradients were requested; unused slots hold zeros.
    pub grads: Option<Vec<Tensor>>,
}

/// Fresh network for `arch`, initialized from `seed`.
pub fn instantiate_discrete(
    net: &Supernet,
    arch: &DiscreteArch,
    seed: u64,
) -> Result<DiscreteNet, SupernetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = net.init_state(&mut rng);
    DiscreteNet::with_state(net, arch, state)
}

impl DiscreteNet {
    /// Discrete network reading the chosen ops' weights from `state`.
    pub fn with_state(
        net: &Supernet,
        arch: &DiscreteArch,
        state: SupernetState,
    ) -> Result<Self, SupernetError> {
        net.check_state(&state)?;
        let arch = DiscreteArch::new(net.space(), arch.ops().to_vec())?;
        let mut used = vec![false; net.num_tensors()];
        used[..STEM_AND_HEAD].iter_mut().for_each(|u| *u = true);
        for (e, &op) in arch.ops().iter().enumerate() {
            if let Some(slot) = net.op_slot(e, op) {
                used[slot..slot + TENSORS_PER_OP]
                    .iter_mut()
                    .for_each(|u| *u = true);
            }
        }
        Ok(Self {
            net: net.clone(),
            arch,
            state,
            used,
        })
    }

    pub fn arch(&self) -> &DiscreteArch {
        &self.arch
    }

    pub fn supernet(&self) -> &Supernet {
        &self.net
    }

    pub fn state(&self) -> &SupernetState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SupernetState {
        &mut self.state
    }

    /// Which tensor slots the chosen architecture reads.
    pub fn used_slots(&self) -> &[bool] {
        &self.used
    }

    /// Scalar parameter count of stems, head and chosen ops.
    pub fn param_count(&self) -> usize {
        self.state
            .tensors
            .iter()
            .zip(&self.used)
            .filter(|(_, &u)| u)
            .map(|(t, _)| t.len())
            .sum()
    }

    pub fn evaluate(
        &self,
        samples: &Samples,
        noise_seed: u64,
        with_grads: bool,
    ) -> Result<DiscreteEval, SupernetError> {
        let mut tape = Tape::with_noise_seed(noise_seed);
        let params: Vec<Var> = self
            .state
            .tensors
            .iter()
            .zip(&self.used)
            .map(|(t, &u)| match (u, with_grads) {
                (true, true) => tape.param(t.clone()),
                (true, false) => tape.constant(t.clone()),
                (false, _) => tape.constant(Tensor::scalar(0.0)),
            })
            .collect();
        let x = tape.constant(samples.features.clone());
        let (logits, bad) = self.net.record_cell(
            &mut tape,
            &params,
            x,
            |_, _, outs| Ok(outs[0]),
            Some(&self.arch),
        )?;
        let loss = tape.cross_entropy(logits, &samples.labels)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(SupernetError::NonFiniteLoss {
                node: bad.unwrap_or(self.net.space().output_node()),
            });
        }
        let grads = if with_grads {
            let mut g = tape.backward(loss)?;
            Some(
                params
                    .iter()
                    .zip(&self.state.tensors)
                    .zip(&self.used)
                    .map(|((&v, t), &u)| {
                        if u {
                            g.take(v).expect("param gradient")
                        } else {
                            Tensor::zeros(t.shape())
                        }
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(DiscreteEval {
            logits: tape.value(logits).clone(),
            loss: loss_value,
            grads,
        })
    }
}
