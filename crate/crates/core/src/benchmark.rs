//! Structural checks for the bundled benchmark scenario: confirms the
//! expected spaces, devices, services and credential placement are present
//! and reports anything missing.

use crate::model::{CyberspaceModel, EntityClass};

/// Outcome of [`validate_benchmark`]. `missing` lists one line per absent or
/// misplaced element.
#[derive(Debug, Clone, Default)]
pub struct BenchmarkReport {
    pub missing: Vec<String>,
}

impl BenchmarkReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty()
    }
}

const EXPECTED_SPACES: [&str; 4] = ["P1", "P2", "P3", "P4"];
const EXPECTED_DEVICES: [&str; 9] = ["T1", "T2", "D1", "FW1", "FW2", "R", "SW", "S1", "S2"];
const EXPECTED_SERVICES: [&str; 5] =
    ["T2_manager", "FW1_manager", "FW2_manager", "S1_web", "S2_web"];

/// Confirms the benchmark inventory: the four rooms plus an outer space, the
/// device park, the five services, and the credential chain that makes the
/// published attack path realizable.
pub fn validate_benchmark(model: &CyberspaceModel) -> BenchmarkReport {
    let mut report = BenchmarkReport::default();
    let mut require = |ok: bool, what: String| {
        if !ok {
            report.missing.push(what);
        }
    };

    for space in EXPECTED_SPACES {
        require(
            model.entity(space).map(|e| e.class == EntityClass::Space).unwrap_or(false),
            format!("space {space}"),
        );
    }
    require(
        model
            .entity(&model.attacker_start)
            .map(|e| e.class == EntityClass::Space && !EXPECTED_SPACES.contains(&e.id.as_str()))
            .unwrap_or(false),
        "outer start space".to_string(),
    );
    for device in EXPECTED_DEVICES {
        require(
            model.entity(device).map(|e| e.class == EntityClass::Device).unwrap_or(false),
            format!("device {device}"),
        );
    }
    for service in EXPECTED_SERVICES {
        require(
            model.entity(service).map(|e| e.class == EntityClass::Service).unwrap_or(false),
            format!("service {service}"),
        );
    }

    require(info_reachable_in_space(model, "FW1_password", "P2"), "FW1_password reachable in P2".to_string());
    require(info_stored_on_device(model, "FW2_password", "T2"), "FW2_password stored on T2".to_string());
    require(
        info_stored_on_device(model, "S1_web_password", "T2"),
        "S1_web_password stored on T2".to_string(),
    );
    require(
        info_stored_on_service(model, "S2_web_password", "S1_web"),
        "S2_web_password stored on S1_web".to_string(),
    );
    require(
        info_stored_on_device(model, &model.goal, "S2"),
        format!("goal {} stored on S2", model.goal),
    );

    report
}

/// True when the info item sits in the payload of a device located in
/// `space`, or of a service or file resting on such a device.
fn info_reachable_in_space(model: &CyberspaceModel, info: &str, space: &str) -> bool {
    holders_of(model, info).iter().any(|device| {
        model
            .entity(device)
            .and_then(|d| d.location.as_deref())
            .map(|loc| loc == space)
            .unwrap_or(false)
    })
}

fn info_stored_on_device(model: &CyberspaceModel, info: &str, device: &str) -> bool {
    holders_of(model, info).iter().any(|d| d == device)
}

fn info_stored_on_service(model: &CyberspaceModel, info: &str, service: &str) -> bool {
    model
        .entity(service)
        .map(|s| {
            s.payload.iter().any(|i| i == info)
                || model
                    .entities_of(EntityClass::File)
                    .any(|f| f.host.as_deref() == Some(service) && f.payload.iter().any(|i| i == info))
        })
        .unwrap_or(false)
}

/// Devices that ultimately hold the info item, resolving payloads of
/// services and files down to their host device.
fn holders_of(model: &CyberspaceModel, info: &str) -> Vec<String> {
    let mut out = Vec::new();
    for e in &model.entities {
        if !e.payload.iter().any(|i| i == info) {
            continue;
        }
        let device = match e.class {
            EntityClass::Device => Some(e.id.clone()),
            EntityClass::Service => model.device_of_service(&e.id).map(|d| d.id.clone()),
            EntityClass::File => model.device_of_file(&e.id).map(|d| d.id.clone()),
            _ => None,
        };
        if let Some(d) = device {
            out.push(d);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;
    use crate::testing::benchmark_source;

    #[test]
    fn bundled_benchmark_passes_all_checks() {
        let model = load_scenario(&benchmark_source()).unwrap();
        let report = validate_benchmark(&model);
        assert!(report.is_ok(), "missing: {:?}", report.missing);
    }

    #[test]
    fn benchmark_has_106_atoms() {
        let model = load_scenario(&benchmark_source()).unwrap();
        assert_eq!(model.atom_count(), 106);
    }

    #[test]
    fn explicit_atoms_match_derived_enumeration() {
        let model = load_scenario(&benchmark_source()).unwrap();
        assert_eq!(model.atom_order, crate::scenario::derive_atom_order(&model.entities));
    }

    #[test]
    fn missing_service_is_reported() {
        let mut model = load_scenario(&benchmark_source()).unwrap();
        let entities: Vec<_> = model
            .entities
            .iter()
            .filter(|e| e.id != "S2_web" && e.id != "secret_file")
            .cloned()
            .collect();
        let atoms: Vec<_> = model
            .atom_order
            .iter()
            .filter(|a| a.entity != "S2_web" && a.entity != "secret_file")
            .cloned()
            .collect();
        model = CyberspaceModel::build(
            entities,
            model.space_adjacency.clone(),
            model.links.clone(),
            model.base_rules.iter().filter(|r| !matches!(r, crate::model::SecurityRule::Encryption { file, .. } if file == "secret_file")).cloned().collect(),
            model.initial_acl.clone(),
            model.attacker_start.clone(),
            model.goal.clone(),
            atoms,
        )
        .unwrap();
        let report = validate_benchmark(&model);
        assert!(report.missing.iter().any(|m| m.contains("S2_web")), "{:?}", report.missing);
    }

    #[test]
    fn misplaced_goal_is_flagged() {
        let mut model = load_scenario(&benchmark_source()).unwrap();
        for e in &mut model.entities {
            if e.id == "secret_file" {
                e.host = Some("S1_web".to_string());
            }
        }
        let report = validate_benchmark(&model);
        assert!(
            report.missing.iter().any(|m| m.contains("goal")),
            "{:?}",
            report.missing
        );
    }
}
