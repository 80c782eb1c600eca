//! Scenario ingestion: a UTF-8 key/value tree document (TOML) describing the
//! spaces, devices, ports, services, files, info items, wiring, security
//! rules and atom ordering of one cyberspace.
//!
//! Loading is deterministic: the same bytes always produce an identical model
//! with an identical atom order. When the document carries no `atoms` section
//! the order is derived from entity declaration order crossed with the fixed
//! permission-kind order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    legal_kinds, AclRule, CyberspaceModel, Entity, EntityClass, PermissionAtom, PermissionKind,
    SecurityRule,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScenarioDoc {
    #[serde(default)]
    spaces: Vec<String>,
    #[serde(default)]
    devices: Vec<DeviceDecl>,
    #[serde(default)]
    ports: Vec<PortDecl>,
    #[serde(default)]
    services: Vec<ServiceDecl>,
    #[serde(default)]
    files: Vec<FileDecl>,
    #[serde(default)]
    info: Vec<String>,
    #[serde(default)]
    adjacency: Vec<(String, String)>,
    #[serde(default)]
    links: Vec<(String, String)>,
    #[serde(default)]
    rules: Vec<RuleDecl>,
    #[serde(default)]
    acl: Vec<AclDecl>,
    attacker_start: String,
    goal: String,
    /// Explicit state-vector ordering as (entity, kind) pairs. Optional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atoms: Option<Vec<(String, String)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceDecl {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    space: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    payload: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    firewall: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PortDecl {
    id: String,
    device: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ServiceDecl {
    id: String,
    port: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    password: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    payload: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    manager: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDecl {
    id: String,
    /// Host service or device.
    host: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    payload: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RuleDecl {
    /// `key` absent means the space is explicitly open.
    Physical {
        space: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<String>,
    },
    Encryption { file: String, key: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct AclDecl {
    firewall: String,
    src: String,
    dst: String,
    service: String,
}

/// Parses and validates a scenario document.
pub fn load_scenario(source: &str) -> Result<CyberspaceModel, ScenarioError> {
    let doc: ScenarioDoc = toml::from_str(source)?;
    let mut entities = Vec::new();
    for id in &doc.spaces {
        entities.push(Entity::new(id.clone(), EntityClass::Space));
    }
    for d in &doc.devices {
        let mut e = Entity::new(d.id.clone(), EntityClass::Device);
        e.location = d.space.clone();
        e.payload = d.payload.clone();
        e.firewall = d.firewall;
        entities.push(e);
    }
    for p in &doc.ports {
        let mut e = Entity::new(p.id.clone(), EntityClass::Port);
        e.host = Some(p.device.clone());
        entities.push(e);
    }
    for s in &doc.services {
        let mut e = Entity::new(s.id.clone(), EntityClass::Service);
        e.host = Some(s.port.clone());
        e.password = s.password.clone();
        e.payload = s.payload.clone();
        e.manager = s.manager;
        entities.push(e);
    }
    for f in &doc.files {
        let mut e = Entity::new(f.id.clone(), EntityClass::File);
        e.host = Some(f.host.clone());
        e.payload = f.payload.clone();
        entities.push(e);
    }
    for id in &doc.info {
        entities.push(Entity::new(id.clone(), EntityClass::InfoItem));
    }

    let base_rules = doc
        .rules
        .iter()
        .map(|r| match r {
            RuleDecl::Physical { space, key } => SecurityRule::PhysicalAccess {
                space: space.clone(),
                key: key.clone(),
            },
            RuleDecl::Encryption { file, key } => SecurityRule::Encryption {
                file: file.clone(),
                key: key.clone(),
            },
        })
        .collect();
    let initial_acl: Vec<AclRule> = doc
        .acl
        .iter()
        .map(|a| AclRule {
            firewall: a.firewall.clone(),
            src_port: a.src.clone(),
            dst_port: a.dst.clone(),
            service: a.service.clone(),
        })
        .collect();

    let atom_order = match &doc.atoms {
        Some(pairs) => {
            let mut atoms = Vec::with_capacity(pairs.len());
            for (entity, kind) in pairs {
                let kind = PermissionKind::parse(kind).ok_or_else(|| {
                    ScenarioError::Validation(format!("unknown permission kind {kind:?}"))
                })?;
                atoms.push(PermissionAtom::new(entity.clone(), kind));
            }
            atoms
        }
        None => derive_atom_order(&entities),
    };

    CyberspaceModel::build(
        entities,
        doc.adjacency.clone(),
        doc.links.clone(),
        base_rules,
        initial_acl,
        doc.attacker_start.clone(),
        doc.goal.clone(),
        atom_order,
    )
    .map_err(ScenarioError::Validation)
}

/// The default atom ordering: entity declaration order crossed with the
/// fixed kind order of each entity's class.
pub fn derive_atom_order(entities: &[Entity]) -> Vec<PermissionAtom> {
    let mut atoms = Vec::new();
    for e in entities {
        for &kind in legal_kinds(e.class) {
            atoms.push(PermissionAtom::new(e.id.clone(), kind));
        }
    }
    atoms
}

/// Serializes a model back to the scenario document format. Loading the
/// output yields an equal model.
pub fn save_scenario(model: &CyberspaceModel) -> String {
    let mut doc = ScenarioDoc {
        attacker_start: model.attacker_start.clone(),
        goal: model.goal.clone(),
        ..ScenarioDoc::default()
    };
    for e in &model.entities {
        match e.class {
            EntityClass::Space => doc.spaces.push(e.id.clone()),
            EntityClass::Device => doc.devices.push(DeviceDecl {
                id: e.id.clone(),
                space: e.location.clone(),
                payload: e.payload.clone(),
                firewall: e.firewall,
            }),
            EntityClass::Port => doc.ports.push(PortDecl {
                id: e.id.clone(),
                device: e.host.clone().unwrap_or_default(),
            }),
            EntityClass::Service => doc.services.push(ServiceDecl {
                id: e.id.clone(),
                port: e.host.clone().unwrap_or_default(),
                password: e.password.clone(),
                payload: e.payload.clone(),
                manager: e.manager,
            }),
            EntityClass::File => doc.files.push(FileDecl {
                id: e.id.clone(),
                host: e.host.clone().unwrap_or_default(),
                payload: e.payload.clone(),
            }),
            EntityClass::InfoItem => doc.info.push(e.id.clone()),
        }
    }
    doc.adjacency = model.space_adjacency.clone();
    doc.links = model.links.clone();
    for r in &model.base_rules {
        match r {
            SecurityRule::PhysicalAccess { space, key } => doc.rules.push(RuleDecl::Physical {
                space: space.clone(),
                key: key.clone(),
            }),
            SecurityRule::Encryption { file, key } => doc.rules.push(RuleDecl::Encryption {
                file: file.clone(),
                key: key.clone(),
            }),
            SecurityRule::AclAllow(acl) => doc.acl.push(AclDecl {
                firewall: acl.firewall.clone(),
                src: acl.src_port.clone(),
                dst: acl.dst_port.clone(),
                service: acl.service.clone(),
            }),
        }
    }
    for a in &model.initial_acl {
        doc.acl.push(AclDecl {
            firewall: a.firewall.clone(),
            src: a.src_port.clone(),
            dst: a.dst_port.clone(),
            service: a.service.clone(),
        });
    }
    doc.atoms = Some(
        model
            .atom_order
            .iter()
            .map(|a| (a.entity.clone(), a.kind.name().to_string()))
            .collect(),
    );
    toml::to_string(&doc).expect("scenario document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
attacker_start = "lab"
goal = "secret"
spaces = ["lab", "store"]
adjacency = [["lab", "store"]]
info = ["secret"]

[[devices]]
id = "box"
space = "store"
payload = ["secret"]
"#;

    #[test]
    fn loads_tiny_scenario_with_derived_atoms() {
        let model = load_scenario(TINY).unwrap();
        // 2 spaces + 1 device (2 kinds) + 1 info item
        assert_eq!(model.atom_count(), 5);
        assert_eq!(
            model.atom_order[0],
            PermissionAtom::new("lab", PermissionKind::SpaceEnter)
        );
        assert_eq!(
            model.atom_order[2],
            PermissionAtom::new("box", PermissionKind::ObjectUse)
        );
    }

    #[test]
    fn empty_document_is_rejected() {
        let err = load_scenario("attacker_start = \"a\"\ngoal = \"b\"\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(ref m) if m == "empty model"), "{err}");
    }

    #[test]
    fn unknown_acl_port_is_named() {
        let source = format!(
            "{TINY}\n[[acl]]\nfirewall = \"box\"\nsrc = \"ghost_port\"\ndst = \"ghost_port\"\nservice = \"ghost_svc\"\n"
        );
        let err = load_scenario(&source).unwrap_err();
        match err {
            ScenarioError::Validation(m) => assert!(m.contains("box") || m.contains("ghost_port"), "{m}"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn load_is_deterministic() {
        let a = load_scenario(TINY).unwrap();
        let b = load_scenario(TINY).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.atom_order, b.atom_order);
    }

    #[test]
    fn save_load_round_trip() {
        let model = load_scenario(TINY).unwrap();
        let text = save_scenario(&model);
        let reloaded = load_scenario(&text).unwrap();
        assert_eq!(model, reloaded);
    }
}
