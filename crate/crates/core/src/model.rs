//! Multi-domain cyberspace model: entities across the physical, network and
//! information domains, the permission ontology, and the security rules that
//! constrain an attacker.
//!
//! A [`CyberspaceModel`] is immutable after load and safe to share across
//! concurrent readers.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// The nine attacker permission kinds. No other kinds are constructible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PermissionKind {
    SpaceEnter,
    ObjectUse,
    ObjectDominate,
    PortUse,
    PortDominate,
    ServiceReach,
    ServiceDominate,
    FileDominate,
    InformationKnow,
}

impl PermissionKind {
    /// All kinds in their fixed declaration order.
    pub const ALL: [PermissionKind; 9] = [
        PermissionKind::SpaceEnter,
        PermissionKind::ObjectUse,
        PermissionKind::ObjectDominate,
        PermissionKind::PortUse,
        PermissionKind::PortDominate,
        PermissionKind::ServiceReach,
        PermissionKind::ServiceDominate,
        PermissionKind::FileDominate,
        PermissionKind::InformationKnow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PermissionKind::SpaceEnter => "SpaceEnter",
            PermissionKind::ObjectUse => "ObjectUse",
            PermissionKind::ObjectDominate => "ObjectDominate",
            PermissionKind::PortUse => "PortUse",
            PermissionKind::PortDominate => "PortDominate",
            PermissionKind::ServiceReach => "ServiceReach",
            PermissionKind::ServiceDominate => "ServiceDominate",
            PermissionKind::FileDominate => "FileDominate",
            PermissionKind::InformationKnow => "InformationKnow",
        }
    }

    pub fn parse(s: &str) -> Option<PermissionKind> {
        PermissionKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for PermissionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The six entity classes of the closed ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    Space,
    Device,
    Port,
    Service,
    File,
    InfoItem,
}

impl EntityClass {
    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Space => "space",
            EntityClass::Device => "device",
            EntityClass::Port => "port",
            EntityClass::Service => "service",
            EntityClass::File => "file",
            EntityClass::InfoItem => "info item",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The permission kinds that may attach to entities of a given class.
/// The union over all six classes covers exactly the nine kinds.
pub fn legal_kinds(class: EntityClass) -> &'static [PermissionKind] {
    match class {
        EntityClass::Space => &[PermissionKind::SpaceEnter],
        EntityClass::Device => &[PermissionKind::ObjectUse, PermissionKind::ObjectDominate],
        EntityClass::Port => &[PermissionKind::PortUse, PermissionKind::PortDominate],
        EntityClass::Service => &[PermissionKind::ServiceReach, PermissionKind::ServiceDominate],
        EntityClass::File => &[PermissionKind::FileDominate],
        EntityClass::InfoItem => &[PermissionKind::InformationKnow],
    }
}

/// One (entity, permission-kind) coordinate of the attacker state vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PermissionAtom {
    pub entity: String,
    pub kind: PermissionKind,
}

impl PermissionAtom {
    pub fn new(entity: impl Into<String>, kind: PermissionKind) -> Self {
        PermissionAtom { entity: entity.into(), kind }
    }
}

impl fmt::Display for PermissionAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind, self.entity)
    }
}

/// A typed entity of the cyberspace.
///
/// `location` is set for devices (the space they sit in). `host` is set for
/// ports (their device), services (their dependent port) and files (the
/// service or device storing them). `payload` lists info items harvested when
/// the entity is used (devices), authenticated to (services) or extracted
/// from (files). `password` is the credential guarding a service, `manager`
/// marks remote-management services, and `firewall` marks filtering devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub class: EntityClass,
    pub location: Option<String>,
    pub host: Option<String>,
    pub payload: Vec<String>,
    pub password: Option<String>,
    pub firewall: bool,
    pub manager: bool,
}

impl Entity {
    pub fn new(id: impl Into<String>, class: EntityClass) -> Self {
        Entity {
            id: id.into(),
            class,
            location: None,
            host: None,
            payload: Vec::new(),
            password: None,
            firewall: false,
            manager: false,
        }
    }
}

/// One firewall allow entry: data may flow from a port at the source address
/// to a port and service at the destination address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AclRule {
    pub firewall: String,
    pub src_port: String,
    pub dst_port: String,
    pub service: String,
}

impl fmt::Display for AclRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} -> {}/{}", self.firewall, self.src_port, self.dst_port, self.service)
    }
}

/// A security rule of the physical, network or information domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecurityRule {
    /// Entering `space` requires knowing `key`; `key = None` means the space
    /// is explicitly open.
    PhysicalAccess { space: String, key: Option<String> },
    /// A firewall allow entry present in the initial configuration.
    AclAllow(AclRule),
    /// Extracting from `file` requires knowing `key`.
    Encryption { file: String, key: String },
}

/// The immutable scenario: entities, wiring, rules and the atom ordering that
/// defines the attacker state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CyberspaceModel {
    pub entities: Vec<Entity>,
    pub space_adjacency: Vec<(String, String)>,
    pub links: Vec<(String, String)>,
    pub base_rules: Vec<SecurityRule>,
    pub initial_acl: Vec<AclRule>,
    pub attacker_start: String,
    pub goal: String,
    pub atom_order: Vec<PermissionAtom>,
    index: HashMap<String, usize>,
    atom_index: HashMap<PermissionAtom, usize>,
}

impl CyberspaceModel {
    /// Assembles and validates a model. Returns the first violated invariant
    /// together with the offending id.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        entities: Vec<Entity>,
        space_adjacency: Vec<(String, String)>,
        links: Vec<(String, String)>,
        base_rules: Vec<SecurityRule>,
        initial_acl: Vec<AclRule>,
        attacker_start: String,
        goal: String,
        atom_order: Vec<PermissionAtom>,
    ) -> Result<Self, String> {
        let mut index = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(format!("duplicate entity id {:?}", e.id));
            }
        }
        let mut atom_index = HashMap::new();
        for (i, a) in atom_order.iter().enumerate() {
            if atom_index.insert(a.clone(), i).is_some() {
                return Err(format!("duplicate atom {}", a));
            }
        }
        let model = CyberspaceModel {
            entities,
            space_adjacency,
            links,
            base_rules,
            initial_acl,
            attacker_start,
            goal,
            atom_order,
            index,
            atom_index,
        };
        model.validate()?;
        Ok(model)
    }

    fn expect_class(&self, id: &str, class: EntityClass, context: &str) -> Result<(), String> {
        match self.entity(id) {
            Some(e) if e.class == class => Ok(()),
            Some(e) => Err(format!(
                "{context} references {:?} which is a {}, expected a {}",
                id, e.class, class
            )),
            None => Err(format!("{context} references unknown {} {:?}", class, id)),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.entities.is_empty() {
            return Err("empty model".to_string());
        }
        for e in &self.entities {
            match e.class {
                EntityClass::Device => {
                    if let Some(loc) = &e.location {
                        self.expect_class(loc, EntityClass::Space, &format!("device {:?}", e.id))?;
                    }
                }
                EntityClass::Port => {
                    let host = e
                        .host
                        .as_ref()
                        .ok_or_else(|| format!("port {:?} has no host device", e.id))?;
                    self.expect_class(host, EntityClass::Device, &format!("port {:?}", e.id))?;
                }
                EntityClass::Service => {
                    let host = e
                        .host
                        .as_ref()
                        .ok_or_else(|| format!("service {:?} has no dependent port", e.id))?;
                    self.expect_class(host, EntityClass::Port, &format!("service {:?}", e.id))?;
                    if let Some(pw) = &e.password {
                        self.expect_class(pw, EntityClass::InfoItem, &format!("service {:?} password", e.id))?;
                    }
                }
                EntityClass::File => {
                    let host = e
                        .host
                        .as_ref()
                        .ok_or_else(|| format!("file {:?} has no host", e.id))?;
                    match self.entity(host).map(|h| h.class) {
                        Some(EntityClass::Service) | Some(EntityClass::Device) => {}
                        Some(c) => {
                            return Err(format!(
                                "file {:?} hosted on {:?} which is a {}, expected a service or device",
                                e.id, host, c
                            ))
                        }
                        None => return Err(format!("file {:?} references unknown host {:?}", e.id, host)),
                    }
                }
                EntityClass::Space | EntityClass::InfoItem => {}
            }
            for item in &e.payload {
                self.expect_class(item, EntityClass::InfoItem, &format!("payload of {:?}", e.id))?;
            }
        }
        for (a, b) in &self.space_adjacency {
            self.expect_class(a, EntityClass::Space, "adjacency")?;
            self.expect_class(b, EntityClass::Space, "adjacency")?;
        }
        for (a, b) in &self.links {
            self.expect_class(a, EntityClass::Port, "link")?;
            self.expect_class(b, EntityClass::Port, "link")?;
        }
        for rule in &self.base_rules {
            match rule {
                SecurityRule::PhysicalAccess { space, key } => {
                    self.expect_class(space, EntityClass::Space, "physical access rule")?;
                    if let Some(key) = key {
                        self.expect_class(key, EntityClass::InfoItem, "physical access rule")?;
                    }
                }
                SecurityRule::AclAllow(acl) => self.validate_acl(acl)?,
                SecurityRule::Encryption { file, key } => {
                    self.expect_class(file, EntityClass::File, "encryption rule")?;
                    self.expect_class(key, EntityClass::InfoItem, "encryption rule")?;
                }
            }
        }
        for acl in &self.initial_acl {
            self.validate_acl(acl)?;
        }
        self.expect_class(&self.attacker_start, EntityClass::Space, "attacker start")?;
        self.expect_class(&self.goal, EntityClass::InfoItem, "goal")?;
        if self.atom_order.is_empty() {
            return Err("empty atom order".to_string());
        }
        for atom in &self.atom_order {
            let e = self
                .entity(&atom.entity)
                .ok_or_else(|| format!("atom references unknown entity {:?}", atom.entity))?;
            if !legal_kinds(e.class).contains(&atom.kind) {
                return Err(format!(
                    "atom {} pairs kind {} with a {}",
                    atom, atom.kind, e.class
                ));
            }
        }
        Ok(())
    }

    fn validate_acl(&self, acl: &AclRule) -> Result<(), String> {
        match self.entity(&acl.firewall) {
            Some(e) if e.class == EntityClass::Device && e.firewall => {}
            Some(e) if e.class == EntityClass::Device => {
                return Err(format!("acl rule references {:?} which is not a firewall", acl.firewall))
            }
            _ => return Err(format!("acl rule references unknown firewall {:?}", acl.firewall)),
        }
        self.expect_class(&acl.src_port, EntityClass::Port, "acl rule")?;
        self.expect_class(&acl.dst_port, EntityClass::Port, "acl rule")?;
        self.expect_class(&acl.service, EntityClass::Service, "acl rule")?;
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn atom_position(&self, atom: &PermissionAtom) -> Option<usize> {
        self.atom_index.get(atom).copied()
    }

    pub fn atom_count(&self) -> usize {
        self.atom_order.len()
    }

    pub fn entities_of(&self, class: EntityClass) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.class == class)
    }

    /// The device a port belongs to.
    pub fn device_of_port(&self, port: &str) -> Option<&Entity> {
        self.entity(port).and_then(|p| p.host.as_deref()).and_then(|d| self.entity(d))
    }

    /// The device a service ultimately runs on (via its dependent port).
    pub fn device_of_service(&self, service: &str) -> Option<&Entity> {
        self.entity(service)
            .and_then(|s| s.host.as_deref())
            .and_then(|p| self.device_of_port(&self.entity(p)?.id))
    }

    /// The device a file ultimately rests on, resolving a service host to its
    /// device.
    pub fn device_of_file(&self, file: &str) -> Option<&Entity> {
        let host = self.entity(file)?.host.as_deref()?;
        match self.entity(host)?.class {
            EntityClass::Device => self.entity(host),
            EntityClass::Service => self.device_of_service(host),
            _ => None,
        }
    }

    /// Manager services running on the given device.
    pub fn manager_services_of<'a>(&'a self, device: &'a str) -> impl Iterator<Item = &'a Entity> + 'a {
        self.entities_of(EntityClass::Service).filter(move |s| {
            s.manager && self.device_of_service(&s.id).map(|d| d.id == device).unwrap_or(false)
        })
    }

    /// Physical access keys required to enter a space. Empty means open.
    pub fn space_keys(&self, space: &str) -> Vec<Option<&str>> {
        self.base_rules
            .iter()
            .filter_map(|r| match r {
                SecurityRule::PhysicalAccess { space: s, key } if s == space => {
                    Some(key.as_deref())
                }
                _ => None,
            })
            .collect()
    }

    /// The encryption key guarding a file, if any.
    pub fn encryption_key(&self, file: &str) -> Option<&str> {
        self.base_rules.iter().find_map(|r| match r {
            SecurityRule::Encryption { file: f, key } if f == file => Some(key.as_str()),
            _ => None,
        })
    }

    /// Files whose payload contains the given info item, in declaration order.
    pub fn files_containing<'a>(&'a self, info: &'a str) -> impl Iterator<Item = &'a Entity> + 'a {
        self.entities_of(EntityClass::File)
            .filter(move |f| f.payload.iter().any(|i| i == info))
    }

    pub fn spaces_adjacent_to<'a>(&'a self, space: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.space_adjacency.iter().filter_map(move |(a, b)| {
            if a == space {
                Some(b.as_str())
            } else if b == space {
                Some(a.as_str())
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_entities() -> Vec<Entity> {
        let mut space = Entity::new("lab", EntityClass::Space);
        space.payload = vec![];
        let mut device = Entity::new("box", EntityClass::Device);
        device.location = Some("lab".into());
        let goal = Entity::new("secret", EntityClass::InfoItem);
        vec![space, device, goal]
    }

    #[test]
    fn nine_kinds_partition_over_classes() {
        let classes = [
            EntityClass::Space,
            EntityClass::Device,
            EntityClass::Port,
            EntityClass::Service,
            EntityClass::File,
            EntityClass::InfoItem,
        ];
        let mut seen = Vec::new();
        for c in classes {
            seen.extend_from_slice(legal_kinds(c));
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_eq!(legal_kinds(EntityClass::Space), &[PermissionKind::SpaceEnter]);
        assert_eq!(
            legal_kinds(EntityClass::Device),
            &[PermissionKind::ObjectUse, PermissionKind::ObjectDominate]
        );
        assert_eq!(legal_kinds(EntityClass::File), &[PermissionKind::FileDominate]);
    }

    #[test]
    fn build_rejects_empty_model() {
        let err = CyberspaceModel::build(
            vec![],
            vec![],
            vec![],
            vec![],
            vec![],
            "lab".into(),
            "secret".into(),
            vec![],
        )
        .unwrap_err();
        assert_eq!(err, "empty model");
    }

    #[test]
    fn build_rejects_illegal_atom_pairing() {
        let atoms = vec![PermissionAtom::new("box", PermissionKind::SpaceEnter)];
        let err = CyberspaceModel::build(
            tiny_entities(),
            vec![],
            vec![],
            vec![],
            vec![],
            "lab".into(),
            "secret".into(),
            atoms,
        )
        .unwrap_err();
        assert!(err.contains("SpaceEnter"), "{err}");
    }

    #[test]
    fn build_rejects_unknown_acl_port() {
        let mut entities = tiny_entities();
        entities[1].firewall = true;
        let acl = AclRule {
            firewall: "box".into(),
            src_port: "nope".into(),
            dst_port: "nope".into(),
            service: "nope".into(),
        };
        let err = CyberspaceModel::build(
            entities,
            vec![],
            vec![],
            vec![],
            vec![acl],
            "lab".into(),
            "secret".into(),
            vec![PermissionAtom::new("lab", PermissionKind::SpaceEnter)],
        )
        .unwrap_err();
        assert!(err.contains("nope"), "{err}");
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in PermissionKind::ALL {
            assert_eq!(PermissionKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(PermissionKind::parse("NotAKind"), None);
    }
}
