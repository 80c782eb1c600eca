//! The attack environment: permission-vector state, state-dependent action
//! masking, deterministic transitions and the reward schedule.
//!
//! Environment operations are pure functions of `(state, action, model)`;
//! the `&mut self` on [`AttackEnv`] only feeds an internal memo of routing
//! results per ACL configuration. Separate environments over one shared
//! model may run concurrently.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::actions::{ActionTable, ActionTarget, ActionVerb};
use crate::model::{AclRule, CyberspaceModel, EntityClass, PermissionAtom, PermissionKind};
use crate::util::BitSet;

/// Step penalty when an action grants nothing or is infeasible.
pub const STEP_PENALTY: f64 = -0.1;
/// Numerator of the success reward `SUCCESS_NUMERATOR / steps`.
pub const SUCCESS_NUMERATOR: f64 = 500_000.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("action index {index} out of range, table has {len} actions")]
    ActionIndex { index: usize, len: usize },
}

/// Sorted set of packed ACL rule keys. Cheap to clone, hash and compare.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct AclState(Vec<u64>);

impl AclState {
    pub fn contains(&self, key: u64) -> bool {
        self.0.binary_search(&key).is_ok()
    }

    pub fn insert(&mut self, key: u64) {
        if let Err(pos) = self.0.binary_search(&key) {
            self.0.insert(pos, key);
        }
    }

    pub fn remove(&mut self, key: u64) {
        if let Ok(pos) = self.0.binary_search(&key) {
            self.0.remove(pos);
        }
    }

    pub fn keys(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every rule of `other` is present in `self`.
    pub fn is_superset(&self, other: &AclState) -> bool {
        other.0.iter().all(|k| self.contains(*k))
    }
}

#[inline]
fn pack_rule(fw: u16, src: u16, dst: u16, svc: u16) -> u64 {
    (fw as u64) << 48 | (src as u64) << 32 | (dst as u64) << 16 | svc as u64
}

#[inline]
fn unpack_rule(key: u64) -> (u16, u16, u16, u16) {
    ((key >> 48) as u16, (key >> 32) as u16, (key >> 16) as u16, key as u16)
}

/// The attacker's situation: acquired permissions, the mutable firewall
/// configuration, current location and step counters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub permissions: BitSet,
    pub acl: AclState,
    pub attacker_space: u16,
    pub steps_this_attack: u32,
    pub steps_this_episode: u32,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub attack_succeeded: bool,
    pub episode_done: bool,
    pub feasible: bool,
    /// Atom indices granted by this step, in atom order.
    pub newly_granted: Vec<u32>,
    /// Length of the successful attack attempt, set on success.
    pub success_steps: Option<u32>,
}

/// A requirement that can be open, satisfied by knowing an info item, or
/// impossible to satisfy (the key exists but is not a tracked atom).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lock {
    Open,
    Key(u32),
    Never,
}

impl Lock {
    fn satisfied(self, perms: &BitSet) -> bool {
        match self {
            Lock::Open => true,
            Lock::Key(atom) => perms.get(atom as usize),
            Lock::Never => false,
        }
    }
}

/// Action with all entity references resolved to compact indices.
#[derive(Debug, Clone, Copy)]
enum CAction {
    EnterSpace(u16),
    UseDevice(u16),
    DominateDevice(u16),
    UsePort(u16),
    DominatePort(u16),
    ReachService(u16),
    AuthService(u16),
    ReadFile(u16),
    ExtractInfo(u16),
    AclAdd(u64),
    AclRemove(u64),
    Stay,
}

/// Reward waypoints derived from the scenario: the goal, the file holding
/// it, the primary (goal-hosting) and secondary (credential-hosting)
/// device/service pairs and their ports.
#[derive(Debug, Clone, Default)]
struct Waypoints {
    goal_atom: Option<u32>,
    goal_file_atom: Option<u32>,
    primary_pair: Option<(u32, u32)>,
    secondary_pair: Option<(u32, u32)>,
    primary_port_atom: Option<u32>,
    secondary_port_atom: Option<u32>,
}

/// Scenario data resolved to dense indices for fast stepping.
#[derive(Debug)]
struct Compiled {
    // Per-class entity ids in declaration order.
    space_ids: Vec<String>,
    device_ids: Vec<String>,
    port_ids: Vec<String>,
    service_ids: Vec<String>,
    file_ids: Vec<String>,
    info_ids: Vec<String>,

    space_enter_atom: Vec<Option<u32>>,
    space_adj: Vec<Vec<u16>>,
    space_locks: Vec<Vec<Lock>>,

    device_space: Vec<Option<u16>>,
    device_use_atom: Vec<Option<u32>>,
    device_dom_atom: Vec<Option<u32>>,
    device_payload_atoms: Vec<Vec<u32>>,
    device_is_firewall: Vec<bool>,
    /// ServiceDominate atoms of manager services per device.
    device_mgmt_atoms: Vec<Vec<u32>>,

    port_device: Vec<u16>,
    port_use_atom: Vec<Option<u32>>,
    port_dom_atom: Vec<Option<u32>>,
    port_neighbors: Vec<Vec<u16>>,

    service_port: Vec<u16>,
    service_reach_atom: Vec<Option<u32>>,
    service_dom_atom: Vec<Option<u32>>,
    service_auth: Vec<Lock>,
    service_payload_atoms: Vec<Vec<u32>>,

    /// Dominate atom gating ReadFile per file (of the host service/device).
    file_gate_atom: Vec<Option<u32>>,
    file_dom_atom: Vec<Option<u32>>,
    file_lock: Vec<Lock>,
    file_payload_atoms: Vec<Vec<u32>>,

    info_know_atom: Vec<Option<u32>>,
    /// Files carrying each info item, in file declaration order.
    info_files: Vec<Vec<u16>>,

    actions: Vec<CAction>,
    initial_acl: AclState,
    start_space: u16,
    waypoints: Waypoints,

    /// Action table index per packed ACL-add rule key.
    acl_add_action: HashMap<u64, usize>,
    /// Action table index of each service's reach action.
    reach_action: Vec<Option<usize>>,
}

/// Bit matrix of permitted routes: one bit per (service, source port).
type RouteMatrix = BitSet;

pub struct AttackEnv<'m> {
    model: &'m CyberspaceModel,
    table: ActionTable,
    c: Compiled,
    episode_limit: u32,
    route_cache: HashMap<AclState, RouteMatrix>,
}

impl<'m> AttackEnv<'m> {
    pub fn new(model: &'m CyberspaceModel) -> Self {
        let table = ActionTable::build(model);
        Self::with_table(model, table)
    }

    pub fn with_table(model: &'m CyberspaceModel, table: ActionTable) -> Self {
        let c = compile(model, &table);
        AttackEnv { model, table, c, episode_limit: 10_000, route_cache: HashMap::new() }
    }

    pub fn model(&self) -> &CyberspaceModel {
        self.model
    }

    pub fn table(&self) -> &ActionTable {
        &self.table
    }

    pub fn episode_limit(&self) -> u32 {
        self.episode_limit
    }

    pub fn set_episode_limit(&mut self, limit: u32) {
        assert!(limit >= 1);
        self.episode_limit = limit;
    }

    pub fn atom_count(&self) -> usize {
        self.model.atom_count()
    }

    pub fn action_count(&self) -> usize {
        self.table.len()
    }

    pub fn goal_atom(&self) -> Option<usize> {
        self.c.waypoints.goal_atom.map(|a| a as usize)
    }

    /// The initial state: attacker in the start space with no permissions
    /// and the configured ACL entries.
    pub fn reset(&self) -> EnvState {
        EnvState {
            permissions: BitSet::new(self.model.atom_count()),
            acl: self.c.initial_acl.clone(),
            attacker_space: self.c.start_space,
            steps_this_attack: 0,
            steps_this_episode: 0,
        }
    }

    /// The observation: 1.0 per granted atom, ordered by the atom order.
    pub fn state_vector(&self, state: &EnvState) -> Vec<f64> {
        state.permissions.as_f64_vec()
    }

    /// Feasibility bit per action table entry.
    pub fn action_mask(&mut self, state: &EnvState) -> BitSet {
        self.ensure_routes(&state.acl);
        let routes = &self.route_cache[&state.acl];
        let mut mask = BitSet::new(self.c.actions.len());
        for i in 0..self.c.actions.len() {
            if feasible(&self.c, state, self.c.actions[i], routes) {
                mask.set(i);
            }
        }
        mask
    }

    /// Executes one action. Infeasible actions are no-ops with the step
    /// penalty. On success the attacker returns to the start space with
    /// permissions cleared and the initial ACL restored; the episode step
    /// counter keeps running.
    pub fn step(&mut self, state: &EnvState, action: usize) -> Result<StepOutcome, EnvError> {
        let ca = *self
            .c
            .actions
            .get(action)
            .ok_or(EnvError::ActionIndex { index: action, len: self.c.actions.len() })?;
        self.ensure_routes(&state.acl);
        let routes = &self.route_cache[&state.acl];
        let ok = feasible(&self.c, state, ca, routes);

        let mut next = state.clone();
        next.steps_this_attack += 1;
        next.steps_this_episode += 1;

        let mut newly: Vec<u32> = Vec::new();
        let mut reward = STEP_PENALTY;
        let mut succeeded = false;
        let mut success_steps = None;

        if ok {
            apply(&self.c, &mut next, ca, &mut newly);
            reward = reward_from(&self.c.waypoints, &state.permissions, &newly, next.steps_this_attack);
            succeeded = match self.c.waypoints.goal_atom {
                Some(goal) => newly.contains(&goal),
                None => false,
            };
            if succeeded {
                success_steps = Some(next.steps_this_attack);
                next.permissions = BitSet::new(self.model.atom_count());
                next.acl = self.c.initial_acl.clone();
                next.attacker_space = self.c.start_space;
                next.steps_this_attack = 0;
            }
        }

        let episode_done = next.steps_this_episode >= self.episode_limit;
        Ok(StepOutcome {
            next,
            reward,
            attack_succeeded: succeeded,
            episode_done,
            feasible: ok,
            newly_granted: newly,
            success_steps,
        })
    }

    /// The reward for newly granted atoms after `t` steps of the current
    /// attack attempt. The single highest-value matching rule applies.
    pub fn reward_of(&self, prev: &EnvState, newly_granted: &[u32], t: u32) -> f64 {
        reward_from(&self.c.waypoints, &prev.permissions, newly_granted, t)
    }

    /// Decodes the packed ACL state back to rule structs.
    pub fn decode_acl(&self, acl: &AclState) -> Vec<AclRule> {
        acl.keys()
            .iter()
            .map(|&key| {
                let (fw, src, dst, svc) = unpack_rule(key);
                AclRule {
                    firewall: self.c.device_ids[fw as usize].clone(),
                    src_port: self.c.port_ids[src as usize].clone(),
                    dst_port: self.c.port_ids[dst as usize].clone(),
                    service: self.c.service_ids[svc as usize].clone(),
                }
            })
            .collect()
    }

    /// Atoms granted by an action in a state, without stepping counters.
    /// Empty when the action is infeasible.
    pub fn grants_of(&mut self, state: &EnvState, action: usize) -> Vec<u32> {
        match self.step(state, action) {
            Ok(outcome) if outcome.feasible => outcome.newly_granted,
            _ => Vec::new(),
        }
    }

    fn ensure_routes(&mut self, acl: &AclState) {
        if !self.route_cache.contains_key(acl) {
            // The memo only ever grows along an agent's ACL edits; keep it
            // bounded for adversarially churny action sequences.
            if self.route_cache.len() > 20_000 {
                self.route_cache.clear();
            }
            let matrix = compute_routes(&self.c, acl);
            self.route_cache.insert(acl.clone(), matrix);
        }
    }

    /// Oracle support: the atoms whose presence can influence the future of
    /// a search - computed as a fixpoint over the action table. An action
    /// contributes when it grants the goal, edits the ACL state, or grants
    /// an atom some contributing action reads; the atoms read by
    /// contributing actions are the relevant ones. Atoms outside this set
    /// (for example dominate-marks nothing consumes) never alter
    /// feasibility, so search states may be keyed modulo them.
    pub(crate) fn search_relevant_atoms(&self) -> BitSet {
        let c = &self.c;
        let mut relevant = BitSet::new(self.model.atom_count());
        let mut contributes = vec![false; c.actions.len()];
        loop {
            let mut changed = false;
            for (i, &action) in c.actions.iter().enumerate() {
                if contributes[i] {
                    continue;
                }
                let grants = action_grants(c, action);
                let now = matches!(action, CAction::AclAdd(_) | CAction::AclRemove(_))
                    || grants.iter().any(|&g| {
                        Some(g) == c.waypoints.goal_atom || relevant.get(g as usize)
                    });
                if now {
                    contributes[i] = true;
                    for atom in action_reads(c, action) {
                        if !relevant.get(atom as usize) {
                            relevant.set(atom as usize);
                            changed = true;
                        }
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        relevant
    }

    /// Oracle support: for every service not yet reached and every held
    /// source port, the cheapest way to open its route right now - the
    /// missing allow rules on firewalls the attacker can currently manage,
    /// followed by the reach action. Returns at most one minimal option per
    /// service; firewalls without a matching add action (or an unmanaged
    /// management service) act as hard blockers.
    pub(crate) fn oracle_view(&mut self, state: &EnvState) -> Vec<(u16, usize, Vec<usize>)> {
        let c = &self.c;
        let nports = c.port_ids.len();
        let held_ports: Vec<u16> = (0..nports as u16)
            .filter(|&q| {
                c.port_use_atom[q as usize]
                    .map(|a| state.permissions.get(a as usize))
                    .unwrap_or(false)
            })
            .collect();
        if held_ports.is_empty() {
            return Vec::new();
        }
        let managed_firewalls: Vec<u16> = (0..c.device_ids.len() as u16)
            .filter(|&d| {
                c.device_is_firewall[d as usize]
                    && c.device_mgmt_atoms[d as usize]
                        .iter()
                        .any(|&a| state.permissions.get(a as usize))
            })
            .collect();

        let mut options = Vec::new();
        for svc in 0..c.service_ids.len() as u16 {
            let reached = c.service_reach_atom[svc as usize]
                .map(|a| state.permissions.get(a as usize))
                .unwrap_or(true);
            if reached {
                continue;
            }
            let Some(reach_action) = c.reach_action[svc as usize] else {
                continue;
            };
            let dst = c.service_port[svc as usize];
            let mut best: Option<(u16, Vec<u16>)> = None;
            for &q in &held_ports {
                // Firewalls that could be opened for this (source, service)
                // pair: managed, rule absent, add action present.
                let addable: Vec<u16> = managed_firewalls
                    .iter()
                    .copied()
                    .filter(|&fw| {
                        let key = pack_rule(fw, q, dst, svc);
                        !state.acl.contains(key) && c.acl_add_action.contains_key(&key)
                    })
                    .collect();
                let ceiling = best.as_ref().map(|(_, f)| f.len()).unwrap_or(usize::MAX);
                if let Some(fset) = minimal_opening_set(c, &state.acl, q, dst, svc, &addable, ceiling)
                {
                    let better = best.as_ref().map(|(_, b)| fset.len() < b.len()).unwrap_or(true);
                    if better {
                        best = Some((q, fset));
                    }
                }
            }
            if let Some((q, fset)) = best {
                let adds: Vec<usize> = fset
                    .iter()
                    .map(|&fw| c.acl_add_action[&pack_rule(fw, q, dst, svc)])
                    .collect();
                options.push((svc, reach_action, adds));
            }
        }
        options
    }
}

fn action_grants(c: &Compiled, action: CAction) -> Vec<u32> {
    let some = |a: Option<u32>| a.into_iter().collect::<Vec<_>>();
    match action {
        CAction::EnterSpace(s) => some(c.space_enter_atom[s as usize]),
        CAction::UseDevice(d) => {
            let mut v = some(c.device_use_atom[d as usize]);
            v.extend(&c.device_payload_atoms[d as usize]);
            v
        }
        CAction::DominateDevice(d) => some(c.device_dom_atom[d as usize]),
        CAction::UsePort(p) => some(c.port_use_atom[p as usize]),
        CAction::DominatePort(p) => some(c.port_dom_atom[p as usize]),
        CAction::ReachService(v) => some(c.service_reach_atom[v as usize]),
        CAction::AuthService(v) => {
            let mut out = some(c.service_dom_atom[v as usize]);
            out.extend(&c.service_payload_atoms[v as usize]);
            out
        }
        CAction::ReadFile(f) => some(c.file_dom_atom[f as usize]),
        CAction::ExtractInfo(i) => some(c.info_know_atom[i as usize]),
        CAction::AclAdd(_) | CAction::AclRemove(_) | CAction::Stay => Vec::new(),
    }
}

fn action_reads(c: &Compiled, action: CAction) -> Vec<u32> {
    let lock_atom = |l: &Lock| match l {
        Lock::Key(a) => Some(*a),
        _ => None,
    };
    match action {
        CAction::EnterSpace(s) => {
            c.space_locks[s as usize].iter().filter_map(lock_atom).collect()
        }
        CAction::UseDevice(d) => match c.device_space[d as usize] {
            Some(space) => c.space_enter_atom[space as usize].into_iter().collect(),
            None => Vec::new(),
        },
        CAction::DominateDevice(d) => c.device_use_atom[d as usize].into_iter().collect(),
        CAction::UsePort(p) => {
            let dev = c.port_device[p as usize] as usize;
            let mut v: Vec<u32> = c.device_use_atom[dev].into_iter().collect();
            v.extend(&c.device_mgmt_atoms[dev]);
            v
        }
        CAction::DominatePort(p) => {
            let dev = c.port_device[p as usize] as usize;
            let mut v: Vec<u32> = c.port_use_atom[p as usize].into_iter().collect();
            v.extend(c.device_dom_atom[dev]);
            v
        }
        CAction::ReachService(_) => c.port_use_atom.iter().flatten().copied().collect(),
        CAction::AuthService(v) => {
            let mut out: Vec<u32> = c.service_reach_atom[v as usize].into_iter().collect();
            out.extend(lock_atom(&c.service_auth[v as usize]));
            out
        }
        CAction::ReadFile(f) => c.file_gate_atom[f as usize].into_iter().collect(),
        CAction::ExtractInfo(i) => {
            let mut out = Vec::new();
            for &f in &c.info_files[i as usize] {
                out.extend(c.file_dom_atom[f as usize]);
                out.extend(lock_atom(&c.file_lock[f as usize]));
            }
            out
        }
        CAction::AclAdd(key) | CAction::AclRemove(key) => {
            let (fw, _, _, _) = unpack_rule(key);
            c.device_mgmt_atoms[fw as usize].clone()
        }
        CAction::Stay => Vec::new(),
    }
}

/// Smallest subset of `addable` firewalls whose allow rules open the route
/// from `src` to `dst`, searched in ascending size and fixed order. Returns
/// `None` when even the full set leaves the route closed, or when every
/// opening set would reach `ceiling` or more rules.
fn minimal_opening_set(
    c: &Compiled,
    acl: &AclState,
    src: u16,
    dst: u16,
    svc: u16,
    addable: &[u16],
    ceiling: usize,
) -> Option<Vec<u16>> {
    let max_size = addable.len().min(ceiling.saturating_sub(1));
    for size in 0..=max_size {
        let mut chosen = vec![0usize; size];
        if pick_subset(c, acl, src, dst, svc, addable, &mut chosen, 0, 0) {
            return Some(chosen.iter().map(|&i| addable[i]).collect());
        }
    }
    None
}

fn pick_subset(
    c: &Compiled,
    acl: &AclState,
    src: u16,
    dst: u16,
    svc: u16,
    addable: &[u16],
    chosen: &mut [usize],
    slot: usize,
    from: usize,
) -> bool {
    if slot == chosen.len() {
        let opened: Vec<u16> = chosen.iter().map(|&i| addable[i]).collect();
        return route_open_with(c, acl, src, dst, svc, &opened);
    }
    for i in from..addable.len() {
        chosen[slot] = i;
        if pick_subset(c, acl, src, dst, svc, addable, chosen, slot + 1, i + 1) {
            return true;
        }
    }
    false
}

fn route_open_with(
    c: &Compiled,
    acl: &AclState,
    src: u16,
    dst: u16,
    svc: u16,
    opened: &[u16],
) -> bool {
    let admissible = |p: u16| {
        let dev = c.port_device[p as usize];
        !c.device_is_firewall[dev as usize]
            || acl.contains(pack_rule(dev, src, dst, svc))
            || opened.contains(&dev)
    };
    if !admissible(src) {
        return false;
    }
    let mut seen = vec![false; c.port_ids.len()];
    let mut queue = VecDeque::new();
    seen[src as usize] = true;
    queue.push_back(src);
    while let Some(p) = queue.pop_front() {
        if p == dst {
            return true;
        }
        for &n in &c.port_neighbors[p as usize] {
            if !seen[n as usize] && admissible(n) {
                seen[n as usize] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

/// True when a flow from `src` may reach the port hosting `svc` under the
/// given ACL configuration: some path exists in the port graph on which
/// every firewall device touched (source and destination hosts included)
/// carries the matching allow rule.
fn compute_routes(c: &Compiled, acl: &AclState) -> RouteMatrix {
    let nports = c.port_ids.len();
    let nsvc = c.service_ids.len();
    let mut matrix = BitSet::new(nsvc * nports);
    let mut seen = vec![false; nports];
    let mut queue = VecDeque::new();
    for svc in 0..nsvc {
        let dst = c.service_port[svc];
        for src in 0..nports as u16 {
            let admissible = |p: u16| {
                let dev = c.port_device[p as usize];
                !c.device_is_firewall[dev as usize]
                    || acl.contains(pack_rule(dev, src, dst, svc as u16))
            };
            if !admissible(src) {
                continue;
            }
            seen.iter_mut().for_each(|s| *s = false);
            queue.clear();
            seen[src as usize] = true;
            queue.push_back(src);
            let mut reached = false;
            while let Some(p) = queue.pop_front() {
                if p == dst {
                    reached = true;
                    break;
                }
                for &n in &c.port_neighbors[p as usize] {
                    if !seen[n as usize] && admissible(n) {
                        seen[n as usize] = true;
                        queue.push_back(n);
                    }
                }
            }
            if reached {
                matrix.set(svc * nports + src as usize);
            }
        }
    }
    matrix
}

fn feasible(c: &Compiled, state: &EnvState, action: CAction, routes: &RouteMatrix) -> bool {
    let perms = &state.permissions;
    let has = |atom: Option<u32>| atom.map(|a| perms.get(a as usize)).unwrap_or(false);
    match action {
        CAction::EnterSpace(s) => {
            c.space_adj[state.attacker_space as usize].contains(&s)
                && c.space_locks[s as usize].iter().all(|l| l.satisfied(perms))
        }
        CAction::UseDevice(d) => match c.device_space[d as usize] {
            Some(space) => {
                state.attacker_space == space || has(c.space_enter_atom[space as usize])
            }
            None => false,
        },
        CAction::DominateDevice(d) => has(c.device_use_atom[d as usize]),
        CAction::UsePort(p) => {
            let dev = c.port_device[p as usize] as usize;
            has(c.device_use_atom[dev])
                || c.device_mgmt_atoms[dev].iter().any(|&a| perms.get(a as usize))
        }
        CAction::DominatePort(p) => {
            let dev = c.port_device[p as usize] as usize;
            has(c.port_use_atom[p as usize]) && has(c.device_dom_atom[dev])
        }
        CAction::ReachService(v) => {
            let nports = c.port_ids.len();
            (0..nports).any(|q| {
                has(c.port_use_atom[q]) && routes.get(v as usize * nports + q)
            })
        }
        CAction::AuthService(v) => {
            has(c.service_reach_atom[v as usize]) && c.service_auth[v as usize].satisfied(perms)
        }
        CAction::ReadFile(f) => has(c.file_gate_atom[f as usize]),
        CAction::ExtractInfo(i) => c.info_files[i as usize].iter().any(|&f| {
            has(c.file_dom_atom[f as usize]) && c.file_lock[f as usize].satisfied(perms)
        }),
        CAction::AclAdd(key) | CAction::AclRemove(key) => {
            let (fw, _, _, _) = unpack_rule(key);
            c.device_mgmt_atoms[fw as usize].iter().any(|&a| perms.get(a as usize))
        }
        CAction::Stay => true,
    }
}

/// Applies a feasible action's effects, recording freshly granted atoms.
fn apply(c: &Compiled, state: &mut EnvState, action: CAction, newly: &mut Vec<u32>) {
    let mut grant = |perms: &mut BitSet, atom: Option<u32>| {
        if let Some(a) = atom {
            if !perms.get(a as usize) {
                perms.set(a as usize);
                newly.push(a);
            }
        }
    };
    match action {
        CAction::EnterSpace(s) => {
            grant(&mut state.permissions, c.space_enter_atom[s as usize]);
            state.attacker_space = s;
        }
        CAction::UseDevice(d) => {
            grant(&mut state.permissions, c.device_use_atom[d as usize]);
            for &a in &c.device_payload_atoms[d as usize] {
                grant(&mut state.permissions, Some(a));
            }
        }
        CAction::DominateDevice(d) => grant(&mut state.permissions, c.device_dom_atom[d as usize]),
        CAction::UsePort(p) => grant(&mut state.permissions, c.port_use_atom[p as usize]),
        CAction::DominatePort(p) => grant(&mut state.permissions, c.port_dom_atom[p as usize]),
        CAction::ReachService(v) => {
            grant(&mut state.permissions, c.service_reach_atom[v as usize])
        }
        CAction::AuthService(v) => {
            grant(&mut state.permissions, c.service_dom_atom[v as usize]);
            for &a in &c.service_payload_atoms[v as usize] {
                grant(&mut state.permissions, Some(a));
            }
        }
        CAction::ReadFile(f) => grant(&mut state.permissions, c.file_dom_atom[f as usize]),
        CAction::ExtractInfo(i) => grant(&mut state.permissions, c.info_know_atom[i as usize]),
        CAction::AclAdd(key) => state.acl.insert(key),
        CAction::AclRemove(key) => state.acl.remove(key),
        CAction::Stay => {}
    }
}

fn reward_from(w: &Waypoints, prev: &BitSet, newly: &[u32], t: u32) -> f64 {
    let is_new = |atom: Option<u32>| atom.map(|a| newly.contains(&a)).unwrap_or(false);
    let held = |atom: u32| prev.get(atom as usize) || newly.contains(&atom);
    let pair_completed = |pair: Option<(u32, u32)>| match pair {
        Some((a, b)) => (newly.contains(&a) || newly.contains(&b)) && held(a) && held(b),
        None => false,
    };
    if is_new(w.goal_atom) {
        return SUCCESS_NUMERATOR / t.max(1) as f64;
    }
    if is_new(w.goal_file_atom) {
        return 10.0;
    }
    if pair_completed(w.primary_pair) {
        return 5.0;
    }
    if pair_completed(w.secondary_pair) {
        return 5.0;
    }
    if is_new(w.secondary_port_atom) || is_new(w.primary_port_atom) {
        return 1.0;
    }
    STEP_PENALTY
}

fn compile(model: &CyberspaceModel, table: &ActionTable) -> Compiled {
    let ids_of = |class: EntityClass| -> Vec<String> {
        model.entities_of(class).map(|e| e.id.clone()).collect()
    };
    let space_ids = ids_of(EntityClass::Space);
    let device_ids = ids_of(EntityClass::Device);
    let port_ids = ids_of(EntityClass::Port);
    let service_ids = ids_of(EntityClass::Service);
    let file_ids = ids_of(EntityClass::File);
    let info_ids = ids_of(EntityClass::InfoItem);

    let index_of = |ids: &[String], id: &str| -> u16 {
        ids.iter().position(|x| x == id).expect("validated id") as u16
    };
    let atom = |id: &str, kind: PermissionKind| -> Option<u32> {
        model.atom_position(&PermissionAtom::new(id, kind)).map(|p| p as u32)
    };
    let know_lock = |key: &str| match atom(key, PermissionKind::InformationKnow) {
        Some(a) => Lock::Key(a),
        None => Lock::Never,
    };

    let space_enter_atom: Vec<_> =
        space_ids.iter().map(|s| atom(s, PermissionKind::SpaceEnter)).collect();
    let mut space_adj = vec![Vec::new(); space_ids.len()];
    for (a, b) in &model.space_adjacency {
        let (ia, ib) = (index_of(&space_ids, a), index_of(&space_ids, b));
        if !space_adj[ia as usize].contains(&ib) {
            space_adj[ia as usize].push(ib);
        }
        if ia != ib && !space_adj[ib as usize].contains(&ia) {
            space_adj[ib as usize].push(ia);
        }
    }
    let space_locks: Vec<Vec<Lock>> = space_ids
        .iter()
        .map(|s| {
            model
                .space_keys(s)
                .into_iter()
                .map(|key| match key {
                    None => Lock::Open,
                    Some(k) => know_lock(k),
                })
                .collect()
        })
        .collect();

    let payload_atoms = |payload: &[String]| -> Vec<u32> {
        payload.iter().filter_map(|i| atom(i, PermissionKind::InformationKnow)).collect()
    };

    let devices: Vec<_> = model.entities_of(EntityClass::Device).collect();
    let device_space: Vec<_> = devices
        .iter()
        .map(|d| d.location.as_deref().map(|s| index_of(&space_ids, s)))
        .collect();
    let device_use_atom: Vec<_> =
        devices.iter().map(|d| atom(&d.id, PermissionKind::ObjectUse)).collect();
    let device_dom_atom: Vec<_> =
        devices.iter().map(|d| atom(&d.id, PermissionKind::ObjectDominate)).collect();
    let device_payload_atoms: Vec<_> = devices.iter().map(|d| payload_atoms(&d.payload)).collect();
    let device_is_firewall: Vec<_> = devices.iter().map(|d| d.firewall).collect();
    let device_mgmt_atoms: Vec<Vec<u32>> = devices
        .iter()
        .map(|d| {
            model
                .manager_services_of(&d.id)
                .filter_map(|s| atom(&s.id, PermissionKind::ServiceDominate))
                .collect()
        })
        .collect();

    let ports: Vec<_> = model.entities_of(EntityClass::Port).collect();
    let port_device: Vec<_> = ports
        .iter()
        .map(|p| index_of(&device_ids, p.host.as_deref().expect("validated port host")))
        .collect();
    let port_use_atom: Vec<_> =
        ports.iter().map(|p| atom(&p.id, PermissionKind::PortUse)).collect();
    let port_dom_atom: Vec<_> =
        ports.iter().map(|p| atom(&p.id, PermissionKind::PortDominate)).collect();
    let mut port_neighbors = vec![Vec::new(); port_ids.len()];
    for (a, b) in &model.links {
        let (ia, ib) = (index_of(&port_ids, a), index_of(&port_ids, b));
        if !port_neighbors[ia as usize].contains(&ib) {
            port_neighbors[ia as usize].push(ib);
        }
        if ia != ib && !port_neighbors[ib as usize].contains(&ia) {
            port_neighbors[ib as usize].push(ia);
        }
    }
    // Ports of one device forward to each other internally.
    for i in 0..port_ids.len() {
        for j in 0..port_ids.len() {
            if i != j && port_device[i] == port_device[j] {
                let jj = j as u16;
                if !port_neighbors[i].contains(&jj) {
                    port_neighbors[i].push(jj);
                }
            }
        }
    }

    let services: Vec<_> = model.entities_of(EntityClass::Service).collect();
    let service_port: Vec<_> = services
        .iter()
        .map(|s| index_of(&port_ids, s.host.as_deref().expect("validated service host")))
        .collect();
    let service_reach_atom: Vec<_> =
        services.iter().map(|s| atom(&s.id, PermissionKind::ServiceReach)).collect();
    let service_dom_atom: Vec<_> =
        services.iter().map(|s| atom(&s.id, PermissionKind::ServiceDominate)).collect();
    let service_auth: Vec<_> = services
        .iter()
        .map(|s| match &s.password {
            None => Lock::Open,
            Some(pw) => know_lock(pw),
        })
        .collect();
    let service_payload_atoms: Vec<_> = services.iter().map(|s| payload_atoms(&s.payload)).collect();

    let files: Vec<_> = model.entities_of(EntityClass::File).collect();
    let file_gate_atom: Vec<_> = files
        .iter()
        .map(|f| {
            let host = f.host.as_deref().expect("validated file host");
            match model.entity(host).map(|h| h.class) {
                Some(EntityClass::Service) => atom(host, PermissionKind::ServiceDominate),
                Some(EntityClass::Device) => atom(host, PermissionKind::ObjectDominate),
                _ => None,
            }
        })
        .collect();
    let file_dom_atom: Vec<_> =
        files.iter().map(|f| atom(&f.id, PermissionKind::FileDominate)).collect();
    let file_lock: Vec<_> = files
        .iter()
        .map(|f| match model.encryption_key(&f.id) {
            None => Lock::Open,
            Some(k) => know_lock(k),
        })
        .collect();
    let file_payload_atoms: Vec<_> = files.iter().map(|f| payload_atoms(&f.payload)).collect();

    let info_know_atom: Vec<_> = info_ids
        .iter()
        .map(|i| atom(i, PermissionKind::InformationKnow))
        .collect();
    let info_files: Vec<Vec<u16>> = info_ids
        .iter()
        .map(|i| {
            model
                .files_containing(i)
                .map(|f| index_of(&file_ids, &f.id))
                .collect()
        })
        .collect();

    let actions: Vec<CAction> = table
        .actions()
        .iter()
        .map(|a| match (&a.verb, &a.target) {
            (ActionVerb::EnterSpace, ActionTarget::Entity(id)) => {
                CAction::EnterSpace(index_of(&space_ids, id))
            }
            (ActionVerb::UseDevice, ActionTarget::Entity(id)) => {
                CAction::UseDevice(index_of(&device_ids, id))
            }
            (ActionVerb::DominateDevice, ActionTarget::Entity(id)) => {
                CAction::DominateDevice(index_of(&device_ids, id))
            }
            (ActionVerb::UsePort, ActionTarget::Entity(id)) => {
                CAction::UsePort(index_of(&port_ids, id))
            }
            (ActionVerb::DominatePort, ActionTarget::Entity(id)) => {
                CAction::DominatePort(index_of(&port_ids, id))
            }
            (ActionVerb::ReachService, ActionTarget::Entity(id)) => {
                CAction::ReachService(index_of(&service_ids, id))
            }
            (ActionVerb::AuthService, ActionTarget::Entity(id)) => {
                CAction::AuthService(index_of(&service_ids, id))
            }
            (ActionVerb::ReadFile, ActionTarget::Entity(id)) => {
                CAction::ReadFile(index_of(&file_ids, id))
            }
            (ActionVerb::ExtractInfo, ActionTarget::Entity(id)) => {
                CAction::ExtractInfo(index_of(&info_ids, id))
            }
            (ActionVerb::AclAdd, ActionTarget::Acl(rule)) => CAction::AclAdd(pack_rule(
                index_of(&device_ids, &rule.firewall),
                index_of(&port_ids, &rule.src_port),
                index_of(&port_ids, &rule.dst_port),
                index_of(&service_ids, &rule.service),
            )),
            (ActionVerb::AclRemove, ActionTarget::Acl(rule)) => CAction::AclRemove(pack_rule(
                index_of(&device_ids, &rule.firewall),
                index_of(&port_ids, &rule.src_port),
                index_of(&port_ids, &rule.dst_port),
                index_of(&service_ids, &rule.service),
            )),
            (ActionVerb::Stay, _) => CAction::Stay,
            (verb, target) => unreachable!("malformed action {verb} {target}"),
        })
        .collect();

    let mut initial_acl = AclState::default();
    for rule in &model.initial_acl {
        initial_acl.insert(pack_rule(
            index_of(&device_ids, &rule.firewall),
            index_of(&port_ids, &rule.src_port),
            index_of(&port_ids, &rule.dst_port),
            index_of(&service_ids, &rule.service),
        ));
    }

    let mut acl_add_action = HashMap::new();
    let mut reach_action = vec![None; service_ids.len()];
    for (i, a) in actions.iter().enumerate() {
        match a {
            CAction::AclAdd(key) => {
                acl_add_action.insert(*key, i);
            }
            CAction::ReachService(v) => reach_action[*v as usize] = Some(i),
            _ => {}
        }
    }

    let waypoints = derive_waypoints(model, &atom);

    Compiled {
        start_space: index_of(&space_ids, &model.attacker_start),
        space_ids,
        device_ids,
        port_ids,
        service_ids,
        file_ids,
        info_ids,
        space_enter_atom,
        space_adj,
        space_locks,
        device_space,
        device_use_atom,
        device_dom_atom,
        device_payload_atoms,
        device_is_firewall,
        device_mgmt_atoms,
        port_device,
        port_use_atom,
        port_dom_atom,
        port_neighbors,
        service_port,
        service_reach_atom,
        service_dom_atom,
        service_auth,
        service_payload_atoms,
        file_gate_atom,
        file_dom_atom,
        file_lock,
        file_payload_atoms,
        info_know_atom,
        info_files,
        actions,
        initial_acl,
        waypoints,
        acl_add_action,
        reach_action,
    }
}

/// Walks the credential chain from the goal outward: the file holding the
/// goal anchors the primary device/service pair; the service guarding that
/// file's password anchors the secondary pair.
fn derive_waypoints(
    model: &CyberspaceModel,
    atom: &dyn Fn(&str, PermissionKind) -> Option<u32>,
) -> Waypoints {
    let mut w = Waypoints {
        goal_atom: atom(&model.goal, PermissionKind::InformationKnow),
        ..Waypoints::default()
    };
    let Some(goal_file) = model.files_containing(&model.goal).next() else {
        return w;
    };
    w.goal_file_atom = atom(&goal_file.id, PermissionKind::FileDominate);
    let Some(host) = goal_file.host.as_deref() else {
        return w;
    };
    let Some(host_entity) = model.entity(host) else {
        return w;
    };
    if host_entity.class != EntityClass::Service {
        return w;
    }
    let primary_svc = host_entity;
    if let (Some(dev), Some(dom), Some(sdom)) = (
        model.device_of_service(&primary_svc.id),
        model
            .device_of_service(&primary_svc.id)
            .and_then(|d| atom(&d.id, PermissionKind::ObjectDominate)),
        atom(&primary_svc.id, PermissionKind::ServiceDominate),
    ) {
        let _ = dev;
        w.primary_pair = Some((dom, sdom));
    }
    w.primary_port_atom = primary_svc
        .host
        .as_deref()
        .and_then(|p| atom(p, PermissionKind::PortUse));

    let Some(pw) = primary_svc.password.as_deref() else {
        return w;
    };
    // The secondary service is the one handing out the primary's password,
    // directly or via a hosted file.
    let secondary = model.entities_of(EntityClass::Service).find(|s| {
        s.id != primary_svc.id
            && (s.payload.iter().any(|i| i == pw)
                || model
                    .entities_of(EntityClass::File)
                    .any(|f| f.host.as_deref() == Some(&s.id) && f.payload.iter().any(|i| i == pw)))
    });
    if let Some(sec) = secondary {
        if let (Some(dom), Some(sdom)) = (
            model
                .device_of_service(&sec.id)
                .and_then(|d| atom(&d.id, PermissionKind::ObjectDominate)),
            atom(&sec.id, PermissionKind::ServiceDominate),
        ) {
            w.secondary_pair = Some((dom, sdom));
        }
        w.secondary_port_atom = sec
            .host
            .as_deref()
            .and_then(|p| atom(p, PermissionKind::PortUse));
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ActionVerb;
    use crate::scenario::load_scenario;
    use crate::testing::{benchmark_model, benchmark_path_actions};

    #[test]
    fn reset_is_all_zero() {
        let model = benchmark_model();
        let env = AttackEnv::new(&model);
        let state = env.reset();
        assert_eq!(state.permissions.count_ones(), 0);
        assert_eq!(env.state_vector(&state).len(), 106);
        assert!(env.state_vector(&state).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_mask_allows_open_rooms_and_stay_only() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let mask = env.action_mask(&state);
        let expected: Vec<usize> = [
            env.table().find_entity(ActionVerb::EnterSpace, "P1").unwrap(),
            env.table().find_entity(ActionVerb::EnterSpace, "P2").unwrap(),
            env.table().stay_index().unwrap(),
        ]
        .into_iter()
        .collect();
        let feasible: Vec<usize> = mask.ones().collect();
        assert_eq!(feasible, expected);
    }

    #[test]
    fn entering_p2_sets_exactly_one_bit_with_step_penalty() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let enter_p2 = env.table().find_entity(ActionVerb::EnterSpace, "P2").unwrap();
        let out = env.step(&state, enter_p2).unwrap();
        assert!(out.feasible);
        assert_eq!(out.reward, STEP_PENALTY);
        assert_eq!(out.next.permissions.count_ones(), 1);
        let vec = env.state_vector(&out.next);
        assert_eq!(vec.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn published_path_replays_to_success_in_22_steps() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let mut state = env.reset();
        let actions = benchmark_path_actions(&env);
        assert_eq!(actions.len(), 22);
        let mut last = None;
        for (i, &a) in actions.iter().enumerate() {
            let out = env.step(&state, a).unwrap();
            assert!(out.feasible, "step {} infeasible: {}", i + 1, env.table().get(a).unwrap());
            state = out.next.clone();
            last = Some(out);
        }
        let last = last.unwrap();
        assert!(last.attack_succeeded);
        assert_eq!(last.success_steps, Some(22));
        assert!((last.reward - SUCCESS_NUMERATOR / 22.0).abs() < 1e-9);
        // Attacker went back to the start with a pristine configuration.
        assert_eq!(state.permissions.count_ones(), 0);
        assert_eq!(state.steps_this_attack, 0);
        assert_eq!(state.steps_this_episode, 22);
    }

    #[test]
    fn file_dominate_of_goal_file_pays_ten() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let mut state = env.reset();
        let actions = benchmark_path_actions(&env);
        // Stop right before the final two steps: read then extract.
        for &a in &actions[..actions.len() - 2] {
            state = env.step(&state, a).unwrap().next;
        }
        let read = actions[actions.len() - 2];
        let out = env.step(&state, read).unwrap();
        assert_eq!(out.reward, 10.0);
        assert!(!out.attack_succeeded);
    }

    #[test]
    fn infeasible_action_is_noop_with_penalty() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let dominate = env.table().find_entity(ActionVerb::DominateDevice, "S2").unwrap();
        let out = env.step(&state, dominate).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.reward, STEP_PENALTY);
        assert_eq!(out.next.permissions, state.permissions);
        assert_eq!(out.next.steps_this_episode, 1);
    }

    #[test]
    fn out_of_range_action_errors() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let err = env.step(&state, 100_000).unwrap_err();
        assert!(matches!(err, EnvError::ActionIndex { .. }));
    }

    #[test]
    fn episode_done_fires_exactly_at_limit() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        env.set_episode_limit(5);
        let stay = env.table().stay_index().unwrap();
        let mut state = env.reset();
        for i in 1..=5u32 {
            let out = env.step(&state, stay).unwrap();
            assert_eq!(out.episode_done, i == 5, "at step {i}");
            state = out.next;
        }
    }

    #[test]
    fn acl_add_enables_reach_mask_example() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let mut state = env.reset();
        let actions = benchmark_path_actions(&env);
        // Walk until FW1_manager is dominated (5 steps).
        for &a in &actions[..5] {
            state = env.step(&state, a).unwrap().next;
        }
        let mask = env.action_mask(&state);
        let add = env
            .table()
            .find_acl(
                ActionVerb::AclAdd,
                &AclRule {
                    firewall: "FW1".into(),
                    src_port: "D1_E0".into(),
                    dst_port: "T2_E0".into(),
                    service: "T2_manager".into(),
                },
            )
            .unwrap();
        assert!(mask.get(add));
        // T2_manager is not reachable until the rule lands.
        let reach = env.table().find_entity(ActionVerb::ReachService, "T2_manager").unwrap();
        assert!(!mask.get(reach));
        state = env.step(&state, add).unwrap().next;
        let mask = env.action_mask(&state);
        assert!(mask.get(reach));
    }

    #[test]
    fn reward_of_matches_schedule() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let s1_port = model
            .atom_position(&PermissionAtom::new("S1_E0", PermissionKind::PortUse))
            .unwrap() as u32;
        assert_eq!(env.reward_of(&state, &[s1_port], 7), 1.0);
        assert_eq!(env.reward_of(&state, &[], 7), STEP_PENALTY);
        let goal = env.goal_atom().unwrap() as u32;
        assert!((env.reward_of(&state, &[goal], 500_000) - 1.0).abs() < 1e-12);
        assert!((env.reward_of(&state, &[goal], 1000) - 500.0).abs() < 1e-12);
    }

    #[test]
    fn success_reset_restores_initial_acl_and_rearms_shaping() {
        let model = benchmark_model();
        let mut env = AttackEnv::new(&model);
        let mut state = env.reset();
        let actions = benchmark_path_actions(&env);
        for &a in &actions {
            state = env.step(&state, a).unwrap().next;
        }
        assert_eq!(state.acl, env.reset().acl);
        // The same path replays inside the same episode.
        let mut second = None;
        for &a in &actions {
            let out = env.step(&state, a).unwrap();
            assert!(out.feasible);
            state = out.next.clone();
            second = Some(out);
        }
        let second = second.unwrap();
        assert!(second.attack_succeeded);
        assert_eq!(second.success_steps, Some(22));
        assert_eq!(state.steps_this_episode, 44);
    }

    #[test]
    fn goal_adjacent_degenerate_scenario_succeeds_in_one_use() {
        let source = r#"
attacker_start = "lab"
goal = "secret"
spaces = ["lab"]
info = ["secret"]

[[devices]]
id = "box"
space = "lab"
payload = ["secret"]
"#;
        let model = load_scenario(source).unwrap();
        let mut env = AttackEnv::new(&model);
        let state = env.reset();
        let use_box = env.table().find_entity(ActionVerb::UseDevice, "box").unwrap();
        let out = env.step(&state, use_box).unwrap();
        assert!(out.attack_succeeded);
        assert_eq!(out.success_steps, Some(1));
        assert!((out.reward - SUCCESS_NUMERATOR).abs() < 1e-9);
    }
}
