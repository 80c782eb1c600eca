//! Brute-force ground truth: exhaustive search over the exact environment
//! transition function, returning the provably shortest attack path.
//!
//! Search states are environment states with step counters dropped (they
//! never affect feasibility). Two action families are pruned, each with a
//! monotonicity argument: `Stay` grants nothing, and ACL state appears only
//! positively in preconditions, so removals and idle steps can never shorten
//! a path. ACL additions are explored as part of *reach macros*: an allow
//! rule keyed by (firewall, source, destination, service) influences exactly
//! one route query, so on any shortest path every addition can be reordered
//! to sit directly before the service reach it unlocks, and additions that
//! unlock no later reach can be dropped outright. A macro bundles the
//! minimal set of missing-rule additions on manageable firewalls with the
//! reach they open, which keeps the explored ACL configurations to the
//! useful ones. Edge costs are the primitive step counts, searched in
//! depth-bucket order, and every returned path is replay-verified through
//! the unmodified environment.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::actions::ActionVerb;
use crate::env::{AttackEnv, EnvState};
use crate::model::{CyberspaceModel, PermissionAtom};
use crate::util::BitSet;

/// Generous bound for the bundled scenarios; their paths run a few dozen
/// primitives.
pub const DEFAULT_DEPTH_LIMIT: u32 = 200;

const NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("memory budget exceeded: {frontier} search nodes")]
    MemoryBudget { frontier: usize },
    #[error("replay of the found path diverged at step {step}")]
    ReplayFailed { step: usize },
}

/// A replay-verified shortest attack path.
#[derive(Debug, Clone)]
pub struct AttackPath {
    /// Action table indices from reset to success.
    pub actions: Vec<usize>,
    pub length: usize,
    /// Reward of the final, succeeding step.
    pub terminal_reward: f64,
    /// Reward of every step along the path.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum OracleOutcome {
    Path(AttackPath),
    Unreachable,
}

impl OracleOutcome {
    pub fn path(&self) -> Option<&AttackPath> {
        match self {
            OracleOutcome::Path(p) => Some(p),
            OracleOutcome::Unreachable => None,
        }
    }
}

struct Node {
    state: EnvState,
    parent: Option<usize>,
    edge: Vec<usize>,
    depth: u32,
}

/// Shortest action sequence from reset to capturing the goal, or
/// `Unreachable` within the depth limit.
pub fn shortest_attack_path(
    model: &CyberspaceModel,
    depth_limit: u32,
) -> Result<OracleOutcome, OracleError> {
    let mut env = AttackEnv::new(model);
    shortest_attack_path_in(&mut env, depth_limit)
}

/// As [`shortest_attack_path`] but over a caller-built environment, e.g.
/// one with a filtered action table.
pub fn shortest_attack_path_in(
    env: &mut AttackEnv<'_>,
    depth_limit: u32,
) -> Result<OracleOutcome, OracleError> {
    let mut search = Search::new(env, depth_limit);
    search.run(env)?;
    match search.best {
        Some((_, node)) => {
            let actions = search.path_to(node);
            let path = replay(env, actions)?;
            Ok(OracleOutcome::Path(path))
        }
        None => Ok(OracleOutcome::Unreachable),
    }
}

/// Every permission atom grantable within the step budget.
pub fn reachable_permissions(
    model: &CyberspaceModel,
    depth_limit: u32,
) -> Result<BTreeSet<PermissionAtom>, OracleError> {
    let mut env = AttackEnv::new(model);
    reachable_permissions_in(&mut env, depth_limit)
}

pub fn reachable_permissions_in(
    env: &mut AttackEnv<'_>,
    depth_limit: u32,
) -> Result<BTreeSet<PermissionAtom>, OracleError> {
    let mut search = Search::new(env, depth_limit);
    search.exhaustive = true;
    search.run(env)?;
    Ok(search
        .granted
        .ones()
        .map(|i| env.model().atom_order[i].clone())
        .collect())
}

struct Search {
    nodes: Vec<Node>,
    /// Best depth per canonical key: permissions projected onto the
    /// search-relevant atoms, plus ACL state and attacker location. Atoms
    /// nothing reads never change feasibility, so states differing only in
    /// them share one key.
    best_depth: HashMap<EnvState, u32>,
    relevant: BitSet,
    buckets: Vec<VecDeque<usize>>,
    depth_limit: u32,
    /// (depth, node index of the success parent + pending edge) once found.
    best: Option<(u32, usize)>,
    /// Success edge actions appended after the winning parent.
    success_edge: Vec<usize>,
    /// Union of atoms granted anywhere within the depth limit.
    granted: BitSet,
    /// When set, keep searching after a success (for reachability).
    exhaustive: bool,
}

impl Search {
    fn new(env: &mut AttackEnv<'_>, depth_limit: u32) -> Self {
        let relevant = env.search_relevant_atoms();
        let init = env.reset();
        let mut best_depth = HashMap::new();
        best_depth.insert(canonical_key(&init, &relevant), 0);
        let nodes = vec![Node { state: init, parent: None, edge: Vec::new(), depth: 0 }];
        let mut buckets = vec![VecDeque::new()];
        buckets[0].push_back(0);
        Search {
            nodes,
            best_depth,
            relevant,
            buckets,
            depth_limit,
            best: None,
            success_edge: Vec::new(),
            granted: BitSet::new(env.atom_count()),
            exhaustive: false,
        }
    }

    fn run(&mut self, env: &mut AttackEnv<'_>) -> Result<(), OracleError> {
        let mut d = 0u32;
        loop {
            if let Some((best, _)) = self.best {
                if !self.exhaustive && d >= best {
                    break;
                }
            }
            if d as usize >= self.buckets.len() || d > self.depth_limit {
                break;
            }
            while let Some(idx) = self.buckets[d as usize].pop_front() {
                let key = canonical_key(&self.nodes[idx].state, &self.relevant);
                if self.nodes[idx].depth != d || self.best_depth.get(&key) != Some(&d) {
                    continue; // stale queue entry
                }
                self.expand(env, idx)?;
                if self.nodes.len() > NODE_BUDGET {
                    return Err(OracleError::MemoryBudget { frontier: self.nodes.len() });
                }
            }
            d += 1;
        }
        Ok(())
    }

    fn expand(&mut self, env: &mut AttackEnv<'_>, idx: usize) -> Result<(), OracleError> {
        let state = self.nodes[idx].state.clone();
        let depth = self.nodes[idx].depth;
        let mask = env.action_mask(&state);

        // Primitive actions except Stay, ACL edits and service reaches;
        // the latter are covered by reach macros below.
        for action in mask.ones() {
            let verb = env.table().get(action).map(|a| a.verb).unwrap_or(ActionVerb::Stay);
            if matches!(
                verb,
                ActionVerb::Stay | ActionVerb::AclAdd | ActionVerb::AclRemove | ActionVerb::ReachService
            ) {
                continue;
            }
            self.offer(env, idx, depth, &state, vec![action])?;
        }

        // Reach macros: for each unreached service and each held source
        // port, the cheapest set of addable missing firewall rules that
        // opens the route, followed by the reach itself.
        for (_service, reach_action, adds) in env.oracle_view(&state) {
            let mut edge = adds;
            edge.push(reach_action);
            self.offer(env, idx, depth, &state, edge)?;
        }
        Ok(())
    }

    fn offer(
        &mut self,
        env: &mut AttackEnv<'_>,
        parent: usize,
        parent_depth: u32,
        parent_state: &EnvState,
        edge: Vec<usize>,
    ) -> Result<(), OracleError> {
        let new_depth = parent_depth + edge.len() as u32;
        if new_depth > self.depth_limit {
            return Ok(());
        }
        if let Some((best, _)) = self.best {
            if !self.exhaustive && new_depth >= best {
                return Ok(());
            }
        }
        let mut state = parent_state.clone();
        let mut succeeded = false;
        for &action in &edge {
            let out = env.step(&state, action).expect("oracle actions are in range");
            debug_assert!(out.feasible, "oracle expands feasible actions only");
            for &a in &out.newly_granted {
                self.granted.set(a as usize);
            }
            succeeded = out.attack_succeeded;
            state = out.next;
            if succeeded {
                break;
            }
        }
        if succeeded {
            if self.best.as_ref().map(|&(b, _)| new_depth < b).unwrap_or(true) {
                self.best = Some((new_depth, parent));
                self.success_edge = edge;
            }
            return Ok(());
        }
        let key = canonical_key(&state, &self.relevant);
        match self.best_depth.get(&key) {
            Some(&d) if d <= new_depth => return Ok(()),
            _ => {}
        }
        self.best_depth.insert(key, new_depth);
        state.steps_this_attack = 0;
        state.steps_this_episode = 0;
        let node = Node { state, parent: Some(parent), edge, depth: new_depth };
        self.nodes.push(node);
        let id = self.nodes.len() - 1;
        while self.buckets.len() <= new_depth as usize {
            self.buckets.push(VecDeque::new());
        }
        self.buckets[new_depth as usize].push_back(id);
        Ok(())
    }

    fn path_to(&self, success_parent: usize) -> Vec<usize> {
        let mut segments = vec![self.success_edge.clone()];
        let mut cursor = Some(success_parent);
        while let Some(i) = cursor {
            segments.push(self.nodes[i].edge.clone());
            cursor = self.nodes[i].parent;
        }
        segments.reverse();
        segments.concat()
    }
}

/// Search key: counters dropped, permissions restricted to atoms some
/// precondition on the path to the goal can read.
fn canonical_key(state: &EnvState, relevant: &BitSet) -> EnvState {
    EnvState {
        permissions: state.permissions.masked(relevant),
        acl: state.acl.clone(),
        attacker_space: state.attacker_space,
        steps_this_attack: 0,
        steps_this_episode: 0,
    }
}

fn replay(env: &mut AttackEnv<'_>, actions: Vec<usize>) -> Result<AttackPath, OracleError> {
    let mut state = env.reset();
    let mut rewards = Vec::with_capacity(actions.len());
    let mut succeeded = false;
    for (i, &action) in actions.iter().enumerate() {
        let out = env.step(&state, action).map_err(|_| OracleError::ReplayFailed { step: i })?;
        if !out.feasible {
            return Err(OracleError::ReplayFailed { step: i });
        }
        rewards.push(out.reward);
        succeeded = out.attack_succeeded;
        state = out.next;
        if succeeded && i + 1 != actions.len() {
            return Err(OracleError::ReplayFailed { step: i });
        }
    }
    if !succeeded {
        return Err(OracleError::ReplayFailed { step: actions.len() });
    }
    let terminal_reward = *rewards.last().expect("non-empty path");
    Ok(AttackPath { length: actions.len(), actions, terminal_reward, rewards })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{ActionTable, ActionVerb};
    use crate::scenario::load_scenario;
    use crate::testing::{benchmark_model, scenario_path, GOAL_ADJACENT, MINI_FIREWALLED};

    #[test]
    fn goal_adjacent_scenario_has_one_step_path() {
        let model = load_scenario(GOAL_ADJACENT).unwrap();
        let out = shortest_attack_path(&model, 10).unwrap();
        let path = out.path().expect("reachable");
        assert_eq!(path.length, 1);
        assert!((path.terminal_reward - 500_000.0).abs() < 1e-9);
    }

    #[test]
    fn mini_firewalled_scenario_has_nine_step_path() {
        let model = load_scenario(MINI_FIREWALLED).unwrap();
        let out = shortest_attack_path(&model, 50).unwrap();
        let path = out.path().expect("reachable");
        assert_eq!(path.length, 9);
    }

    /// Independent oracle-of-the-oracle: plain breadth-first enumeration
    /// over raw feasible primitives confirms no shorter path exists.
    #[test]
    fn mini_firewalled_optimality_against_exhaustive_enumeration() {
        let model = load_scenario(MINI_FIREWALLED).unwrap();
        let oracle_len = shortest_attack_path(&model, 50)
            .unwrap()
            .path()
            .unwrap()
            .length as u32;

        let mut env = AttackEnv::new(&model);
        let mut frontier = vec![env.reset()];
        let mut seen = std::collections::HashSet::new();
        let mut shortest_success = None;
        'outer: for depth in 1..=oracle_len {
            let mut next = Vec::new();
            for state in &frontier {
                let mask = env.action_mask(state);
                for action in mask.ones() {
                    let out = env.step(state, action).unwrap();
                    if !out.feasible {
                        continue;
                    }
                    if out.attack_succeeded {
                        shortest_success = Some(depth);
                        break 'outer;
                    }
                    let mut key = out.next.clone();
                    key.steps_this_attack = 0;
                    key.steps_this_episode = 0;
                    if seen.insert(key.clone()) {
                        next.push(key);
                    }
                }
            }
            frontier = next;
        }
        assert_eq!(shortest_success, Some(oracle_len));
    }

    #[test]
    fn benchmark_path_has_three_acl_additions_in_order() {
        let model = benchmark_model();
        let out = shortest_attack_path(&model, DEFAULT_DEPTH_LIMIT).unwrap();
        let path = out.path().expect("benchmark is attackable");
        assert_eq!(path.length, 22);
        let env = AttackEnv::new(&model);
        let add_targets: Vec<String> = path
            .actions
            .iter()
            .filter_map(|&a| {
                let action = env.table().get(a).unwrap();
                match (&action.verb, &action.target) {
                    (ActionVerb::AclAdd, crate::actions::ActionTarget::Acl(rule)) => {
                        Some(rule.service.clone())
                    }
                    _ => None,
                }
            })
            .collect();
        assert_eq!(add_targets, vec!["T2_manager", "S1_web", "S2_web"]);
    }

    #[test]
    fn benchmark_without_acl_add_is_unreachable() {
        let model = benchmark_model();
        let table = ActionTable::build_filtered(&model, &[ActionVerb::AclAdd]);
        let mut env = AttackEnv::with_table(&model, table);
        let out = shortest_attack_path_in(&mut env, DEFAULT_DEPTH_LIMIT).unwrap();
        assert!(matches!(out, OracleOutcome::Unreachable));
    }

    #[test]
    fn rule_variants_monotonically_lengthen_the_path() {
        let mut lengths = Vec::new();
        for name in ["benchmark.scn", "benchmark_r4.scn", "benchmark_r5.scn", "benchmark_r6.scn"] {
            let source = std::fs::read_to_string(scenario_path(name)).unwrap();
            let model = load_scenario(&source).unwrap();
            let out = shortest_attack_path(&model, DEFAULT_DEPTH_LIMIT).unwrap();
            lengths.push(out.path().expect("variant is attackable").length);
        }
        assert!(lengths.windows(2).all(|w| w[0] <= w[1]), "{lengths:?}");
        assert!(lengths.windows(2).any(|w| w[0] < w[1]), "{lengths:?}");
    }

    #[test]
    fn reachable_permissions_is_monotone_and_matches_single_step() {
        let model = benchmark_model();
        let none = reachable_permissions(&model, 0).unwrap();
        assert!(none.is_empty());

        let one = reachable_permissions(&model, 1).unwrap();
        // Independent single-step enumeration.
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let mask = env.action_mask(&state);
        let mut expected = BTreeSet::new();
        for action in mask.ones() {
            for atom in env.grants_of(&state, action) {
                expected.insert(model.atom_order[atom as usize].clone());
            }
        }
        assert_eq!(one, expected);

        let five = reachable_permissions(&model, 5).unwrap();
        assert!(five.is_superset(&one));
    }

    #[test]
    fn reachable_permissions_eventually_includes_goal() {
        let model = benchmark_model();
        let all = reachable_permissions(&model, 40).unwrap();
        let goal = PermissionAtom::new(model.goal.clone(), crate::model::PermissionKind::InformationKnow);
        assert!(all.contains(&goal));
    }
}
