//! Support for tests and examples: bundled scenario loading and the
//! hand-verified benchmark attack path used as a replay fixture.

use std::path::PathBuf;

use crate::actions::ActionVerb;
use crate::env::AttackEnv;
use crate::model::{AclRule, CyberspaceModel};
use crate::scenario::load_scenario;

/// Directory holding the bundled `.scn` files.
pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario_path(name: &str) -> PathBuf {
    scenario_dir().join(name)
}

pub fn benchmark_source() -> String {
    std::fs::read_to_string(scenario_path("benchmark.scn")).expect("bundled benchmark")
}

pub fn benchmark_model() -> CyberspaceModel {
    load_scenario(&benchmark_source()).expect("benchmark loads")
}

pub fn variant_model(name: &str) -> CyberspaceModel {
    let source = std::fs::read_to_string(scenario_path(name)).expect("bundled variant");
    load_scenario(&source).expect("variant loads")
}

/// The six-stage attack path through the baseline benchmark, spelled out as
/// action table indices: enter P2 and harvest the FW1 credential from the
/// sensor, manage FW1 and open the route to T2's management service, read
/// the credential store, pivot through T2's second port to manage FW2, open
/// and take S1's web service, then open S2's, and extract the secret.
pub fn benchmark_path_actions(env: &AttackEnv<'_>) -> Vec<usize> {
    let t = env.table();
    let entity = |verb: ActionVerb, id: &str| {
        t.find_entity(verb, id)
            .unwrap_or_else(|| panic!("missing action {verb} {id}"))
    };
    let acl_add = |fw: &str, src: &str, dst: &str, svc: &str| {
        t.find_acl(
            ActionVerb::AclAdd,
            &AclRule {
                firewall: fw.into(),
                src_port: src.into(),
                dst_port: dst.into(),
                service: svc.into(),
            },
        )
        .unwrap_or_else(|| panic!("missing acl action {fw} {src}"))
    };
    vec![
        entity(ActionVerb::EnterSpace, "P2"),
        entity(ActionVerb::UseDevice, "D1"),
        entity(ActionVerb::UsePort, "D1_E0"),
        entity(ActionVerb::ReachService, "FW1_manager"),
        entity(ActionVerb::AuthService, "FW1_manager"),
        acl_add("FW1", "D1_E0", "T2_E0", "T2_manager"),
        entity(ActionVerb::ReachService, "T2_manager"),
        entity(ActionVerb::AuthService, "T2_manager"),
        entity(ActionVerb::ReadFile, "T2_creds"),
        entity(ActionVerb::ExtractInfo, "FW2_password"),
        entity(ActionVerb::ExtractInfo, "S1_web_password"),
        entity(ActionVerb::UsePort, "T2_S1"),
        entity(ActionVerb::ReachService, "FW2_manager"),
        entity(ActionVerb::AuthService, "FW2_manager"),
        acl_add("FW2", "D1_E0", "S1_E0", "S1_web"),
        entity(ActionVerb::ReachService, "S1_web"),
        entity(ActionVerb::AuthService, "S1_web"),
        acl_add("FW2", "D1_E0", "S2_E0", "S2_web"),
        entity(ActionVerb::ReachService, "S2_web"),
        entity(ActionVerb::AuthService, "S2_web"),
        entity(ActionVerb::ReadFile, "secret_file"),
        entity(ActionVerb::ExtractInfo, "secret"),
    ]
}

/// A one-action scenario: the goal credential sits on a console in the
/// attacker's own room.
pub const GOAL_ADJACENT: &str = r#"
attacker_start = "lab"
goal = "secret"
spaces = ["lab"]
info = ["secret"]

[[devices]]
id = "box"
space = "lab"
payload = ["secret"]
"#;

/// Two rooms with self-adjacency on both: every table action is feasible in
/// every reachable state, so masked and unmasked policies coincide.
pub const ALWAYS_FEASIBLE: &str = r#"
attacker_start = "a"
goal = "phantom"
spaces = ["a", "b"]
adjacency = [["a", "a"], ["a", "b"], ["b", "b"]]
info = ["phantom"]
"#;

/// A small firewalled scenario: manage the firewall from the console, open
/// the route to the server's web service, and lift the goal from its file.
/// Shortest path: use console, use its port, reach + auth the firewall
/// manager, add the allow rule, reach + auth the web service, read the
/// file, extract - nine actions.
pub const MINI_FIREWALLED: &str = r#"
attacker_start = "lab"
goal = "loot"
spaces = ["lab"]
info = ["loot", "fwx_password"]

links = [["C1_E0", "FWX_E0"], ["FWX_E1", "SVR_E0"]]

[[devices]]
id = "C1"
space = "lab"
payload = ["fwx_password"]

[[devices]]
id = "FWX"
firewall = true

[[devices]]
id = "SVR"

[[ports]]
id = "C1_E0"
device = "C1"

[[ports]]
id = "FWX_E0"
device = "FWX"

[[ports]]
id = "FWX_E1"
device = "FWX"

[[ports]]
id = "FWX_E2"
device = "FWX"

[[ports]]
id = "SVR_E0"
device = "SVR"

[[services]]
id = "FWX_manager"
port = "FWX_E2"
password = "fwx_password"
manager = true

[[services]]
id = "SVR_web"
port = "SVR_E0"

[[files]]
id = "loot_file"
host = "SVR_web"
payload = ["loot"]

[[acl]]
firewall = "FWX"
src = "C1_E0"
dst = "FWX_E2"
service = "FWX_manager"
"#;
