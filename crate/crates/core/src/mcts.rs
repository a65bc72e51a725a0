//! Time-limited Monte Carlo tree search over architecture mutations, plus
//! the greedy and random baseline policies used in ablations.
//!
//! Each iteration runs the four phases: UCB1 selection down the tree, full
//! expansion of the reached leaf (one edge per legal action), a rollout of
//! `n` random actions followed by short training on the simulation set, and
//! backpropagation of the resulting score. The final move is the root action
//! with the highest visit count (robust child).

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::actions::{enumerate_actions, execute, Action};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::training::{evaluate, evaluate_loss, run_epoch};

/// How a trained candidate is scored on the simulation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Fraction of correctly classified simulation samples.
    Accuracy,
    /// `exp(-loss)`: maps the final mean loss monotonically into (0, 1].
    Loss,
}

/// Which decision policy picks the structural change each generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Mcts,
    Greedy,
    Random,
}

/// Budget and knobs for one search call.
#[derive(Debug, Clone)]
pub struct SearchBudget {
    /// Wall-clock limit; at least one iteration always completes.
    pub time_limit: Duration,
    /// When set, run exactly this many iterations instead of watching the
    /// clock. This is the reproducible mode: identical seeds then give
    /// identical searches.
    pub max_iterations: Option<u64>,
    /// Rollout depth: number of random actions applied before scoring.
    pub rollout_depth: usize,
    /// UCB1 exploration constant.
    pub exploration: f64,
    /// Training epochs for each candidate on the simulation set.
    pub sim_epochs: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            time_limit: Duration::from_secs(30),
            max_iterations: None,
            rollout_depth: 2,
            exploration: std::f64::consts::SQRT_2,
            sim_epochs: 10,
        }
    }
}

/// SGD settings used when training candidates on the simulation set.
#[derive(Debug, Clone, Copy)]
pub struct SgdOpts {
    pub lr: f64,
    pub batch_size: usize,
}

/// The UCB1 value of one action edge (Eq. of upper confidence bounds applied
/// to trees): `Q + C * sqrt(ln N(s) / N(s,a))`; unvisited edges are infinite.
pub fn ucb_value(q: f64, edge_visits: u64, node_visits: u64, exploration: f64) -> f64 {
    if edge_visits == 0 {
        return f64::INFINITY;
    }
    q + exploration * ((node_visits as f64).ln() / edge_visits as f64).sqrt()
}

#[derive(Debug)]
struct EdgeStat {
    action: Action,
    child: Option<Box<MctsNode>>,
    visits: u64,
    /// Running mean of all rollout scores propagated through this edge.
    q: f64,
}

/// One search-tree node: a candidate structure plus per-action statistics.
#[derive(Debug)]
pub struct MctsNode {
    structure: LayerGraph,
    visits: u64,
    edges: Option<Vec<EdgeStat>>,
}

impl MctsNode {
    fn new(structure: LayerGraph) -> MctsNode {
        MctsNode {
            structure,
            visits: 1, // the initial visit
            edges: None,
        }
    }

    /// Creates one edge per legal action (the expansion phase).
    fn expand(&mut self) -> Result<()> {
        if self.edges.is_none() {
            let actions = enumerate_actions(&self.structure)?;
            self.edges = Some(
                actions
                    .into_iter()
                    .map(|action| EdgeStat {
                        action,
                        child: None,
                        visits: 0,
                        q: 0.0,
                    })
                    .collect(),
            );
        }
        Ok(())
    }

    /// Index of the action chosen by UCB1; unvisited edges come first, ties
    /// fall to the deterministic action ordering.
    fn ucb_index(&self, exploration: f64) -> Result<usize> {
        let edges = self.edges.as_ref().expect("node expanded");
        if edges.is_empty() {
            return Err(Error::Terminal("no legal actions at this node".into()));
        }
        if let Some(i) = edges.iter().position(|e| e.visits == 0) {
            return Ok(i);
        }
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, e) in edges.iter().enumerate() {
            let v = ucb_value(e.q, e.visits, self.visits, exploration);
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        Ok(best)
    }

    /// The action UCB1 selects at this node.
    pub fn ucb_select(&self, exploration: f64) -> Result<Action> {
        let i = self.ucb_index(exploration)?;
        Ok(self.edges.as_ref().unwrap()[i].action)
    }

    pub fn visit_count(&self) -> u64 {
        self.visits
    }

    /// (action, visits, mean score) per edge, in action order.
    pub fn edge_stats(&self) -> Vec<(Action, u64, f64)> {
        self.edges
            .as_ref()
            .map(|es| es.iter().map(|e| (e.action, e.visits, e.q)).collect())
            .unwrap_or_default()
    }
}

/// Applies `depth` uniformly random legal actions, re-enumerating after each;
/// stops early when no action is legal.
pub fn rollout<R: Rng>(g: &LayerGraph, depth: usize, rng: &mut R) -> Result<LayerGraph> {
    let mut current = g.clone();
    for _ in 0..depth {
        let actions = enumerate_actions(&current)?;
        if actions.is_empty() {
            break;
        }
        let pick = actions[rng.gen_range(0..actions.len())];
        current = execute(pick, &current, rng)?;
    }
    Ok(current)
}

/// Trains a copy of `g` on the simulation set for `sim_epochs` epochs and
/// scores it: accuracy mode returns the fraction correct, loss mode returns
/// `exp(-loss)`. The input graph is untouched.
pub fn score<R: Rng>(
    g: &LayerGraph,
    simset: &[Dataset],
    sim_epochs: usize,
    mode: ScoreMode,
    sgd: &SgdOpts,
    rng: &mut R,
) -> Result<f64> {
    if simset.is_empty() || simset[0].is_empty() {
        return Err(Error::InvalidDataset("simulation set is empty".into()));
    }
    let mut model = g.clone();
    for _ in 0..sim_epochs {
        run_epoch(&mut model, simset, sgd.lr, sgd.batch_size, rng)?;
    }
    match mode {
        ScoreMode::Accuracy => evaluate(&model, simset, sgd.batch_size),
        ScoreMode::Loss => Ok((-evaluate_loss(&model, simset, sgd.batch_size)?).exp()),
    }
}

struct SearchCtx<'a, R: Rng> {
    simset: &'a [Dataset],
    budget: &'a SearchBudget,
    mode: ScoreMode,
    sgd: &'a SgdOpts,
    rng: &'a mut R,
}

/// The search tree over structural mutations, usable directly when iteration
/// level control or introspection is needed; [`search`] is the main entry.
pub struct SearchTree {
    root: MctsNode,
}

impl SearchTree {
    pub fn new(g: &LayerGraph) -> Result<SearchTree> {
        let mut root = MctsNode::new(g.clone());
        root.expand()?;
        if root.edges.as_ref().unwrap().is_empty() {
            return Err(Error::Terminal(
                "no legal actions for the root structure".into(),
            ));
        }
        Ok(SearchTree { root })
    }

    pub fn root(&self) -> &MctsNode {
        &self.root
    }

    /// One full selection / expansion / rollout / backpropagation iteration.
    /// Returns the rollout score and the action path it was propagated along.
    pub fn run_iteration<R: Rng>(
        &mut self,
        simset: &[Dataset],
        budget: &SearchBudget,
        mode: ScoreMode,
        sgd: &SgdOpts,
        rng: &mut R,
    ) -> Result<(f64, Vec<Action>)> {
        let mut ctx = SearchCtx {
            simset,
            budget,
            mode,
            sgd,
            rng,
        };
        Self::iterate(&mut self.root, &mut ctx)
    }

    fn iterate<R: Rng>(node: &mut MctsNode, ctx: &mut SearchCtx<'_, R>) -> Result<(f64, Vec<Action>)> {
        node.expand()?;
        if node.edges.as_ref().unwrap().is_empty() {
            // Dead end in the mutation space: score the structure itself.
            let s = score(&node.structure, ctx.simset, ctx.budget.sim_epochs, ctx.mode, ctx.sgd, ctx.rng)?;
            node.visits += 1;
            return Ok((s, Vec::new()));
        }
        let idx = node.ucb_index(ctx.budget.exploration)?;
        let structure = &node.structure;
        let edge = &mut node.edges.as_mut().unwrap()[idx];
        let (s, path) = if edge.visits == 0 {
            // First traversal: materialize the child and roll out from it.
            if edge.child.is_none() {
                let child_structure = execute(edge.action, structure, ctx.rng)?;
                edge.child = Some(Box::new(MctsNode::new(child_structure)));
            }
            let child = edge.child.as_mut().unwrap();
            let rolled = rollout(&child.structure, ctx.budget.rollout_depth, ctx.rng)?;
            let s = score(&rolled, ctx.simset, ctx.budget.sim_epochs, ctx.mode, ctx.sgd, ctx.rng)?;
            child.visits += 1;
            (s, vec![edge.action])
        } else {
            let child = edge.child.as_mut().expect("visited edge has a child");
            let (s, mut path) = Self::iterate(child, ctx)?;
            path.insert(0, edge.action);
            (s, path)
        };
        // Backpropagation: running mean per edge, visit counts per node.
        edge.visits += 1;
        edge.q += (s - edge.q) / edge.visits as f64;
        node.visits += 1;
        Ok((s, path))
    }

    /// Final move: highest visit count, ties by higher mean score, then by
    /// the deterministic action order.
    pub fn best_action(&self) -> Action {
        let edges = self.root.edges.as_ref().expect("root is expanded");
        let mut best = 0;
        for (i, e) in edges.iter().enumerate().skip(1) {
            let b = &edges[best];
            if e.visits > b.visits || (e.visits == b.visits && e.q > b.q) {
                best = i;
            }
        }
        edges[best].action
    }
}

/// Runs MCTS until the budget is exhausted and returns the chosen action.
/// With `max_iterations` set the search is iteration-limited (reproducible),
/// otherwise wall-clock-limited with at least one completed iteration.
/// Telemetry lines `iteration,path,score,elapsed_ms` go to `log`.
pub fn search<R: Rng>(
    g: &LayerGraph,
    simset: &[Dataset],
    budget: &SearchBudget,
    mode: ScoreMode,
    sgd: &SgdOpts,
    rng: &mut R,
    mut log: Option<&mut (dyn Write + 'static)>,
) -> Result<Action> {
    let mut tree = SearchTree::new(g)?;
    let start = Instant::now();
    let mut iteration: u64 = 0;
    loop {
        let (s, path) = tree.run_iteration(simset, budget, mode, sgd, rng)?;
        iteration += 1;
        if let Some(w) = log.as_deref_mut() {
            let path_text: Vec<String> = path.iter().map(|a| a.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{}",
                iteration,
                path_text.join("|"),
                s,
                start.elapsed().as_millis()
            )?;
        }
        let done = match budget.max_iterations {
            Some(n) => iteration >= n,
            None => start.elapsed() >= budget.time_limit,
        };
        if done {
            break;
        }
    }
    Ok(tree.best_action())
}

/// Scores every legal action once (one step of lookahead) and returns the
/// argmax; ties fall to the deterministic action order.
pub fn greedy_policy<R: Rng>(
    g: &LayerGraph,
    simset: &[Dataset],
    sim_epochs: usize,
    mode: ScoreMode,
    sgd: &SgdOpts,
    rng: &mut R,
) -> Result<Action> {
    let actions = enumerate_actions(g)?;
    if actions.is_empty() {
        return Err(Error::Terminal(
            "no legal actions for the current structure".into(),
        ));
    }
    let mut best = actions[0];
    let mut best_score = f64::NEG_INFINITY;
    for action in actions {
        let candidate = execute(action, g, rng)?;
        let s = score(&candidate, simset, sim_epochs, mode, sgd, rng)?;
        if s > best_score {
            best_score = s;
            best = action;
        }
    }
    Ok(best)
}

/// Picks a legal action uniformly at random.
pub fn random_policy<R: Rng>(g: &LayerGraph, rng: &mut R) -> Result<Action> {
    let actions = enumerate_actions(g)?;
    if actions.is_empty() {
        return Err(Error::Terminal(
            "no legal actions for the current structure".into(),
        ));
    }
    Ok(actions[rng.gen_range(0..actions.len())])
}

/// Dispatches to the configured policy.
#[allow(clippy::too_many_arguments)]
pub fn choose_action<R: Rng>(
    policy: Policy,
    g: &LayerGraph,
    simset: &[Dataset],
    budget: &SearchBudget,
    mode: ScoreMode,
    sgd: &SgdOpts,
    rng: &mut R,
    log: Option<&mut (dyn Write + 'static)>,
) -> Result<Action> {
    match policy {
        Policy::Mcts => search(g, simset, budget, mode, sgd, rng, log),
        Policy::Greedy => greedy_policy(g, simset, budget.sim_epochs, mode, sgd, rng),
        Policy::Random => random_policy(g, rng),
    }
}
