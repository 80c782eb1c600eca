//! The global attack action table: every legal verb/target pair of a
//! scenario, enumerated deterministically from entity declaration order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AclRule, CyberspaceModel, EntityClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionVerb {
    EnterSpace,
    UseDevice,
    DominateDevice,
    UsePort,
    DominatePort,
    ReachService,
    AuthService,
    ReadFile,
    ExtractInfo,
    AclAdd,
    AclRemove,
    Stay,
}

impl ActionVerb {
    pub fn name(self) -> &'static str {
        match self {
            ActionVerb::EnterSpace => "EnterSpace",
            ActionVerb::UseDevice => "UseDevice",
            ActionVerb::DominateDevice => "DominateDevice",
            ActionVerb::UsePort => "UsePort",
            ActionVerb::DominatePort => "DominatePort",
            ActionVerb::ReachService => "ReachService",
            ActionVerb::AuthService => "AuthService",
            ActionVerb::ReadFile => "ReadFile",
            ActionVerb::ExtractInfo => "ExtractInfo",
            ActionVerb::AclAdd => "AclAdd",
            ActionVerb::AclRemove => "AclRemove",
            ActionVerb::Stay => "Stay",
        }
    }
}

impl fmt::Display for ActionVerb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Target of an action: an entity id, a firewall rule, or nothing (Stay).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionTarget {
    Entity(String),
    Acl(AclRule),
    None,
}

impl fmt::Display for ActionTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionTarget::Entity(id) => f.write_str(id),
            ActionTarget::Acl(rule) => write!(f, "{rule}"),
            ActionTarget::None => f.write_str("-"),
        }
    }
}

/// One primitive attack action at a fixed position in the global table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackAction {
    pub verb: ActionVerb,
    pub target: ActionTarget,
    pub index: usize,
}

impl fmt::Display for AttackAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.target)
    }
}

/// The finite, scenario-fixed action table. Enumeration order: spaces,
/// devices (use then dominate), ports (use then dominate), services (reach
/// then auth), files, extractable info items, ACL additions, ACL removals,
/// and finally Stay. ACL actions pair every firewall with every source port
/// and destination service; the destination port is the service's own.
#[derive(Debug, Clone)]
pub struct ActionTable {
    actions: Vec<AttackAction>,
}

impl ActionTable {
    pub fn build(model: &CyberspaceModel) -> Self {
        Self::build_filtered(model, &[])
    }

    /// Builds the table without the given verbs. Used to probe how the
    /// attack surface shrinks when a capability is denied.
    pub fn build_filtered(model: &CyberspaceModel, exclude: &[ActionVerb]) -> Self {
        let keep = |verb: ActionVerb| !exclude.contains(&verb);
        let mut actions = Vec::new();
        let mut push = |verb: ActionVerb, target: ActionTarget| {
            let index = actions.len();
            actions.push(AttackAction { verb, target, index });
        };

        if keep(ActionVerb::EnterSpace) {
            for e in model.entities_of(EntityClass::Space) {
                push(ActionVerb::EnterSpace, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::UseDevice) {
            for e in model.entities_of(EntityClass::Device) {
                push(ActionVerb::UseDevice, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::DominateDevice) {
            for e in model.entities_of(EntityClass::Device) {
                push(ActionVerb::DominateDevice, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::UsePort) {
            for e in model.entities_of(EntityClass::Port) {
                push(ActionVerb::UsePort, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::DominatePort) {
            for e in model.entities_of(EntityClass::Port) {
                push(ActionVerb::DominatePort, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::ReachService) {
            for e in model.entities_of(EntityClass::Service) {
                push(ActionVerb::ReachService, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::AuthService) {
            for e in model.entities_of(EntityClass::Service) {
                push(ActionVerb::AuthService, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::ReadFile) {
            for e in model.entities_of(EntityClass::File) {
                push(ActionVerb::ReadFile, ActionTarget::Entity(e.id.clone()));
            }
        }
        if keep(ActionVerb::ExtractInfo) {
            for e in model.entities_of(EntityClass::InfoItem) {
                if model.files_containing(&e.id).next().is_some() {
                    push(ActionVerb::ExtractInfo, ActionTarget::Entity(e.id.clone()));
                }
            }
        }
        for verb in [ActionVerb::AclAdd, ActionVerb::AclRemove] {
            if !keep(verb) {
                continue;
            }
            for fw in model.entities_of(EntityClass::Device).filter(|d| d.firewall) {
                for port in model.entities_of(EntityClass::Port) {
                    for svc in model.entities_of(EntityClass::Service) {
                        let rule = AclRule {
                            firewall: fw.id.clone(),
                            src_port: port.id.clone(),
                            dst_port: svc.host.clone().expect("service has port"),
                            service: svc.id.clone(),
                        };
                        push(verb, ActionTarget::Acl(rule));
                    }
                }
            }
        }
        if keep(ActionVerb::Stay) {
            push(ActionVerb::Stay, ActionTarget::None);
        }

        ActionTable { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&AttackAction> {
        self.actions.get(index)
    }

    pub fn actions(&self) -> &[AttackAction] {
        &self.actions
    }

    /// Index of the first action matching verb and entity target.
    pub fn find_entity(&self, verb: ActionVerb, entity: &str) -> Option<usize> {
        self.actions
            .iter()
            .position(|a| a.verb == verb && matches!(&a.target, ActionTarget::Entity(id) if id == entity))
    }

    /// Index of the ACL action matching verb and rule.
    pub fn find_acl(&self, verb: ActionVerb, rule: &AclRule) -> Option<usize> {
        self.actions
            .iter()
            .position(|a| a.verb == verb && matches!(&a.target, ActionTarget::Acl(r) if r == rule))
    }

    pub fn stay_index(&self) -> Option<usize> {
        self.actions.iter().position(|a| a.verb == ActionVerb::Stay)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;
    use crate::testing::benchmark_source;

    #[test]
    fn benchmark_table_is_enumerated_deterministically() {
        let model = load_scenario(&benchmark_source()).unwrap();
        let table = ActionTable::build(&model);
        // 5 spaces + 2*10 devices + 2*28 ports + 2*5 services + 3 files
        // + 4 extractable items + 2*(2*28*5) acl actions + stay
        assert_eq!(table.len(), 5 + 20 + 56 + 10 + 3 + 4 + 560 + 1);
        let again = ActionTable::build(&model);
        assert_eq!(table.actions(), again.actions());
        for (i, a) in table.actions().iter().enumerate() {
            assert_eq!(a.index, i);
        }
    }

    #[test]
    fn filtered_table_drops_acl_verbs() {
        let model = load_scenario(&benchmark_source()).unwrap();
        let table = ActionTable::build_filtered(&model, &[ActionVerb::AclAdd, ActionVerb::AclRemove]);
        assert_eq!(table.len(), 5 + 20 + 56 + 10 + 3 + 4 + 1);
        assert!(table.actions().iter().all(|a| a.verb != ActionVerb::AclAdd));
    }
}
