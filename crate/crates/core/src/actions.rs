//! Enumeration and execution of structural mutations.
//!
//! Seven action types exist: add a sequential dense layer, add a residual
//! dense layer with random/zero/identity weights, add a sequential or
//! residual convolution layer, and remove a hidden layer. The three residual
//! dense inits are one variant with a 3-valued parameter, keeping the action
//! space exactly the seven types.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, LayerId, LayerKind};
use crate::tensor::InitScheme;

/// One candidate structural mutation, anchored to layers of the graph it was
/// enumerated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    AddDenseSeq { from: LayerId, to: LayerId },
    AddDenseRes { from: LayerId, to: LayerId, init: InitScheme },
    AddConvSeq { from: LayerId, to: LayerId },
    AddConvRes { from: LayerId, to: LayerId },
    Remove { id: LayerId },
}

impl Action {
    fn rank(&self) -> u8 {
        match self {
            Action::AddDenseSeq { .. } => 0,
            Action::AddDenseRes { .. } => 1,
            Action::AddConvSeq { .. } => 2,
            Action::AddConvRes { .. } => 3,
            Action::Remove { .. } => 4,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::AddDenseSeq { from, to } => write!(f, "add_dense_seq {from}->{to}"),
            Action::AddDenseRes { from, to, init } => {
                write!(f, "add_dense_res {init} {from}->{to}")
            }
            Action::AddConvSeq { from, to } => write!(f, "add_conv_seq {from}->{to}"),
            Action::AddConvRes { from, to } => write!(f, "add_conv_res {from}->{to}"),
            Action::Remove { id } => write!(f, "remove {id}"),
        }
    }
}

/// Lists every legal action for `g` in a deterministic order:
/// (variant rank, from-id, to-id, init rank).
///
/// Dense layers may be inserted wherever the receiver is not a convolution
/// layer; convolution layers require a convolution source. The identity
/// residual variant is listed only where the induced weight matrix is
/// square (sender width equals `def_neu`), rectangular cases are skipped
/// rather than reported as errors.
pub fn enumerate_actions(g: &LayerGraph) -> Result<Vec<Action>> {
    let violations = g.validate();
    if !violations.is_empty() {
        return Err(Error::Structure(format!(
            "cannot enumerate actions for an invalid graph: {}",
            violations[0]
        )));
    }
    let mut out = Vec::new();
    let edges = g.edges();
    let pairs = g.path_pairs();

    for &(from, to) in &edges {
        if !g.layer(to)?.kind.is_conv() {
            out.push(Action::AddDenseSeq { from, to });
        }
    }
    for &(from, to) in &pairs {
        if g.layer(to)?.kind.is_conv() {
            continue;
        }
        for init in [InitScheme::RandomScaled, InitScheme::Zero, InitScheme::Identity] {
            if init == InitScheme::Identity && g.width_of(from)? != g.def_neu() {
                continue;
            }
            out.push(Action::AddDenseRes { from, to, init });
        }
    }
    for &(from, to) in &edges {
        if g.layer(from)?.kind.is_conv() {
            out.push(Action::AddConvSeq { from, to });
        }
    }
    for &(from, to) in &pairs {
        if g.layer(from)?.kind.is_conv() {
            out.push(Action::AddConvRes { from, to });
        }
    }
    for id in g.hidden_ids() {
        out.push(Action::Remove { id });
    }

    out.sort_by_key(|a| {
        let (from, to, init) = match *a {
            Action::AddDenseSeq { from, to } => (from, to, 0u8),
            Action::AddDenseRes { from, to, init } => (from, to, init as u8),
            Action::AddConvSeq { from, to } => (from, to, 0),
            Action::AddConvRes { from, to } => (from, to, 0),
            Action::Remove { id } => (id, id, 0),
        };
        (a.rank(), from, to, init)
    });
    Ok(out)
}

/// Executes `action` on a copy of `g` and returns the mutated graph; `g`
/// itself is untouched. Fails with a stale-action error when the anchors no
/// longer fit the graph the action was enumerated from.
pub fn execute<R: Rng>(action: Action, g: &LayerGraph, rng: &mut R) -> Result<LayerGraph> {
    let mut next = g.clone();
    let stale = |what: String| Error::StaleAction(what);
    match action {
        Action::AddDenseSeq { from, to } => {
            check_anchor(g, from, &action)?;
            check_anchor(g, to, &action)?;
            next.add_layer(LayerKind::DenseSeq, from, to, rng)?;
        }
        Action::AddDenseRes { from, to, init } => {
            check_anchor(g, from, &action)?;
            check_anchor(g, to, &action)?;
            next.add_layer(LayerKind::DenseRes { init }, from, to, rng)?;
        }
        Action::AddConvSeq { from, to } => {
            check_anchor(g, from, &action)?;
            check_anchor(g, to, &action)?;
            next.add_layer(LayerKind::ConvSeq, from, to, rng)?;
        }
        Action::AddConvRes { from, to } => {
            check_anchor(g, from, &action)?;
            check_anchor(g, to, &action)?;
            next.add_layer(LayerKind::ConvRes, from, to, rng)?;
        }
        Action::Remove { id } => {
            if !g.contains(id) {
                return Err(stale(format!("{action}: layer {id} no longer exists")));
            }
            next.remove_layer(id)?;
        }
    }
    Ok(next)
}

fn check_anchor(g: &LayerGraph, id: LayerId, action: &Action) -> Result<()> {
    if g.contains(id) {
        Ok(())
    } else {
        Err(Error::StaleAction(format!(
            "{action}: anchor {id} no longer exists"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InputSpec;
    use crate::propagation::{forward, forward_cached, Payload, Signal};
    use crate::tensor::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn conv_base() -> LayerGraph {
        LayerGraph::new_base_model(
            InputSpec::Conv {
                channels: 1,
                height: 8,
                width: 8,
            },
            10,
            4,
            &mut rng(0),
        )
        .unwrap()
    }

    #[test]
    fn base_model_enumeration_contents() {
        let g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let actions = enumerate_actions(&g).unwrap();
        assert!(actions.contains(&Action::AddDenseSeq { from: input, to: output }));
        assert!(actions.contains(&Action::AddConvSeq { from: input, to: output }));
        assert!(actions.contains(&Action::AddConvRes { from: input, to: output }));
        let res_dense: Vec<_> = actions
            .iter()
            .filter(|a| matches!(a, Action::AddDenseRes { .. }))
            .collect();
        // identity skipped: the conv input width (4*8*8) is not def_neu
        assert_eq!(res_dense.len(), 2);
        assert!(!actions.iter().any(|a| matches!(a, Action::Remove { .. })));
        assert_eq!(actions.len(), 5);
    }

    #[test]
    fn identity_variant_appears_when_square() {
        // dense input with width equal to def_neu
        let g = LayerGraph::new_base_model(InputSpec::Dense { features: 6 }, 6, 3, &mut rng(0))
            .unwrap();
        let actions = enumerate_actions(&g).unwrap();
        assert!(actions
            .iter()
            .any(|a| matches!(a, Action::AddDenseRes { init: InitScheme::Identity, .. })));
    }

    #[test]
    fn chain_counts_respect_bounds() {
        // pure dense chains with h hidden layers
        for hidden in 0..=6usize {
            let mut g =
                LayerGraph::new_base_model(InputSpec::Dense { features: 4 }, 4, 2, &mut rng(1))
                    .unwrap();
            let (input, output) = (g.inputs()[0], g.output());
            let mut tail = input;
            for _ in 0..hidden {
                tail = g.add_layer(LayerKind::DenseSeq, tail, output, &mut rng(2)).unwrap();
            }
            let actions = enumerate_actions(&g).unwrap();
            let seq = actions
                .iter()
                .filter(|a| matches!(a, Action::AddDenseSeq { .. }))
                .count();
            assert_eq!(seq, g.edges().len(), "sequential anchors equal edge count");
            let vertices = g.len();
            // quadratic ceiling in the vertex count
            assert!(seq <= vertices * (vertices - 1) / 2);
            let res_pairs = g.path_pairs().len();
            assert_eq!(res_pairs, vertices * (vertices - 1) / 2);
            if vertices >= 4 {
                let factorial: usize = (1..vertices).product();
                assert!(res_pairs <= factorial);
            }
            let removes = actions
                .iter()
                .filter(|a| matches!(a, Action::Remove { .. }))
                .count();
            assert_eq!(removes, hidden);
        }
    }

    #[test]
    fn two_hidden_layers_give_two_remove_actions() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let h1 = g.add_layer(LayerKind::DenseSeq, input, output, &mut rng(3)).unwrap();
        g.add_layer(LayerKind::DenseSeq, h1, output, &mut rng(4)).unwrap();
        let actions = enumerate_actions(&g).unwrap();
        let removes = actions
            .iter()
            .filter(|a| matches!(a, Action::Remove { .. }))
            .count();
        assert_eq!(removes, 2);
    }

    #[test]
    fn enumeration_is_order_stable() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        g.add_layer(LayerKind::ConvSeq, input, output, &mut rng(5)).unwrap();
        let a = enumerate_actions(&g).unwrap();
        let b = enumerate_actions(&g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_residual_execution_rescales_output() {
        // After adding a zero residual branch into the output, the output's
        // averaged input is halved. The post-action forward must match the
        // pre-action model with its output weights halved, and the new
        // layer's activation must be exactly zero.
        let g = LayerGraph::new_base_model(InputSpec::Dense { features: 5 }, 5, 3, &mut rng(7))
            .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let action = Action::AddDenseRes {
            from: input,
            to: output,
            init: InitScheme::Zero,
        };
        let grown = execute(action, &g, &mut rng(8)).unwrap();
        assert_eq!(grown.len(), g.len() + 1);

        let mut x = Matrix::zeros(5, 4);
        let mut r = rng(9);
        for v in x.data_mut() {
            *v = r.gen::<f64>();
        }
        let signals = vec![Signal::new(g.inputs()[0], Payload::Flat(x))];

        let mut reference = g.clone();
        reference
            .layer_mut(output)
            .unwrap()
            .weights
            .as_mut()
            .unwrap()
            .scale(0.5);
        let expected = forward(&reference, &signals).unwrap();

        let cache = forward_cached(&grown, &signals).unwrap();
        let new_layer = grown
            .hidden_ids()
            .into_iter()
            .next()
            .expect("grown model has the new layer");
        match cache.activation(new_layer).unwrap() {
            Payload::Flat(a) => assert!(a.data().iter().all(|&v| v == 0.0)),
            _ => panic!(),
        }
        let got = cache.probs();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-9, "probabilities diverged: {a} vs {b}");
        }
    }

    #[test]
    fn remove_execution_reconnects() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g.add_layer(LayerKind::DenseSeq, input, output, &mut rng(10)).unwrap();
        let shrunk = execute(Action::Remove { id: mid }, &g, &mut rng(11)).unwrap();
        assert!(shrunk.has_edge(input, output));
        assert!(shrunk.is_valid());
        // original untouched
        assert!(g.contains(mid));
    }

    #[test]
    fn stale_anchor_is_reported() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g.add_layer(LayerKind::DenseSeq, input, output, &mut rng(12)).unwrap();
        let action = Action::Remove { id: mid };
        let shrunk = execute(action, &g, &mut rng(13)).unwrap();
        // executing the same removal again on the shrunk graph: anchor is gone
        let err = execute(action, &shrunk, &mut rng(14)).unwrap_err();
        assert!(matches!(err, Error::StaleAction(_)), "{err}");
        let err = execute(
            Action::AddDenseSeq { from: mid, to: output },
            &shrunk,
            &mut rng(15),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StaleAction(_)), "{err}");
    }

    #[test]
    fn closure_every_enumerated_action_executes_and_validates() {
        // random graphs with <= 5 hidden layers
        let mut r = rng(100);
        for trial in 0..200 {
            let mut g = if trial % 2 == 0 {
                conv_base()
            } else {
                LayerGraph::new_base_model(InputSpec::Dense { features: 6 }, 5, 3, &mut r).unwrap()
            };
            let steps = r.gen_range(0..=5);
            for _ in 0..steps {
                let actions = enumerate_actions(&g).unwrap();
                // bias towards adds so graphs actually grow
                let adds: Vec<_> = actions
                    .iter()
                    .filter(|a| !matches!(a, Action::Remove { .. }))
                    .copied()
                    .collect();
                let pick = adds[r.gen_range(0..adds.len())];
                g = execute(pick, &g, &mut r).unwrap();
            }
            let actions = enumerate_actions(&g).unwrap();
            for action in actions {
                let next = execute(action, &g, &mut r)
                    .unwrap_or_else(|e| panic!("action {action} failed: {e}"));
                assert!(
                    next.is_valid(),
                    "action {action} produced an invalid graph: {:?}",
                    next.validate()
                );
            }
        }
    }

    #[test]
    fn action_text_form() {
        let a = Action::AddDenseRes {
            from: LayerId(3),
            to: LayerId(7),
            init: InitScheme::Zero,
        };
        assert_eq!(a.to_string(), "add_dense_res zero L3->L7");
        assert_eq!(
            Action::Remove { id: LayerId(2) }.to_string(),
            "remove L2"
        );
        assert_eq!(
            Action::AddConvSeq { from: LayerId(0), to: LayerId(1) }.to_string(),
            "add_conv_seq L0->L1"
        );
    }
}
