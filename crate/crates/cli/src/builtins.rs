//! Named plants and ready-to-run scenario files.

use nalgebra::DMatrix;
use pfcontrol::lti::{CanonicalData, PlantModel};

/// Fixed similarity used to hide the canonical structure of the two-block
/// plants.
fn mixing() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[1.0, 0.2, 0.0, 0.3, 0.0, 1.0, 0.4, 0.0, 0.1, 0.0, 1.0, 0.2, 0.0, 0.3, 0.0, 1.0])
}

fn two_block(alpha1: Vec<f64>, alpha2: Vec<f64>) -> CanonicalData {
    CanonicalData::from_structure(
        vec![2, 2],
        vec![alpha1, alpha2],
        vec![vec![vec![], vec![0.3, 0.4]], vec![vec![], vec![]]],
    )
    .expect("valid structure")
}

pub const PLANTS: &[(&str, &str)] = &[
    ("double-integrator", "x1' = x2, x2' = g u"),
    ("scalar-unstable", "x' = x + g u"),
    ("two-state-unstable", "x1' = x2, x2' = x1 + g u (eigenvalues +1, -1)"),
    ("two-block-coupled", "n = 4, two inputs, one drift eigenvalue at +1, coupled canonical blocks"),
    ("observer-two-block", "n = 4, two outputs, oscillatory blocks; the B section holds C^T"),
];

/// Plant by name. For `observer-two-block` the input matrix is `C^T`.
pub fn plant(name: &str) -> Option<PlantModel> {
    let p = match name {
        "double-integrator" => PlantModel::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]], &[&[0.0], &[1.0]]),
        "scalar-unstable" => PlantModel::from_rows(&[&[1.0]], &[&[1.0]]),
        "two-state-unstable" => PlantModel::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]], &[&[0.0], &[1.0]]),
        "two-block-coupled" => {
            let cd = two_block(vec![0.0, 0.0], vec![0.0, -1.0]);
            let m = mixing();
            let mi = m.clone().try_inverse().expect("invertible");
            PlantModel::new(&m * cd.structured_a_hat() * &mi, &m * &cd.b_hat)
        }
        "observer-two-block" => {
            // A = M A_o M^-1 and C = C_o M^-1 with A_o = A_hat^T, C_o = B_hat^T
            let cd = two_block(vec![0.0, 1.0], vec![0.0, 4.0]);
            let m = mixing();
            let mi = m.clone().try_inverse().expect("invertible");
            let a = &m * cd.structured_a_hat().transpose() * &mi;
            let c = cd.b_hat.transpose() * &mi;
            PlantModel::new(a, c.transpose())
        }
        _ => return None,
    };
    Some(p.expect("builtin plants are valid"))
}

pub const SCENARIOS: &[(&str, &str, &str)] = &[
    (
        "double-integrator-sine",
        "fixed law on a double integrator with gain sin(t)",
        "mode = theorem1
horizon = 40

[plant]
builtin = double-integrator
x0 = 1, 0

[gains]
g1 = sine

[controller]
slack = 1
",
    ),
    (
        "two-block-coupled",
        "fixed law on a coupled two-input plant with unstable drift, bump and sine gains",
        "mode = theorem1
horizon = 60

[plant]
builtin = two-block-coupled
x0 = 1, -0.5, 0.8, 0.3

[gains]
g1 = schedule1
g2 = sine

[controller]
slack = 1
",
    ),
    (
        "adaptive-scalar",
        "adaptive law on x' = x + g u with the drift coefficient unknown",
        "mode = adaptive
horizon = 200

[plant]
builtin = scalar-unstable
x0 = 1

[gains]
g1 = sine

[adaptive]
nu = 0.1
eta = 1
lambda_hat0 = 1
",
    ),
    (
        "adaptive-two-state",
        "adaptive law on an unstable two-state plant under a bump gain",
        "mode = adaptive
horizon = 200

[plant]
builtin = two-state-unstable
x0 = 1, -0.5

[gains]
g1 = schedule1

[adaptive]
nu = 0.1
eta = 1
lambda_hat0 = 1
",
    ),
    (
        "observer-two-block",
        "two-output observer with alternating bump measurement gains",
        "mode = observer
horizon = 16

[plant]
builtin = observer-two-block
x0 = 1, -0.5, 0.8, 0.3

[gains]
g1 = schedule1
g2 = schedule2

[observer]
slack = 1
",
    ),
    (
        "paper-spacecraft",
        "two-actuator axi-symmetric spacecraft, 18 degree initial rotation, 200 s",
        "mode = spacecraft
horizon = 200
",
    ),
];

pub fn scenario(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _, _)| *n == name).map(|(_, _, text)| *text)
}

pub fn listing() -> String {
    let mut s = String::from("scenarios:\n");
    for (name, desc, _) in SCENARIOS {
        s.push_str(&format!("  {name:<24} {desc}\n"));
    }
    s.push_str("plants:\n");
    for (name, desc) in PLANTS {
        s.push_str(&format!("  {name:<24} {desc}\n"));
    }
    s
}
