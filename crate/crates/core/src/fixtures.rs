//! Synthetic mixtures used by tests, examples and default CLI configs.
//!
//! The Wagner coefficients are of the usual handbook magnitude for the named
//! compounds and the NRTL sets are chosen to give the stated azeotrope class.
//! None of them is claimed to match a databank entry.

use crate::thermo::{AzeotropeType, Mixture, NrtlParams, PureComponent};

fn component(name: &str, tc: f64, pc_bar: f64, wagner: [f64; 4], t_min: f64) -> PureComponent {
    PureComponent::new(name, tc, pc_bar * 1e5, wagner, t_min, tc).expect("fixture component")
}

pub fn ethanol() -> PureComponent {
    component("ethanol", 513.9, 61.4, [-8.77901, 1.54331, -5.63455, 3.64560], 250.0)
}

pub fn benzene() -> PureComponent {
    component("benzene", 562.2, 48.9, [-7.02699, 1.57906, -1.85958, -3.74987], 250.0)
}

pub fn methanol() -> PureComponent {
    component("methanol", 512.6, 80.9, [-8.65837, 1.29620, -2.75537, -0.27144], 250.0)
}

pub fn water() -> PureComponent {
    component("water", 647.3, 221.2, [-7.85067, 1.87052, -2.28937, -2.04827], 275.0)
}

pub fn acetone() -> PureComponent {
    component("acetone", 508.1, 47.0, [-7.49613, 1.42947, -1.71579, -3.64666], 250.0)
}

pub fn chloroform() -> PureComponent {
    component("chloroform", 536.4, 54.7, [-6.98391, 1.33642, -1.43979, -3.60864], 250.0)
}

/// Pressure-maximum azeotrope with parameters of the size reported for
/// alcohol/aromatic systems. The default test mixture.
pub fn ethbenz_like() -> Mixture {
    Mixture::new(
        "ethbenz-like",
        ethanol(),
        benzene(),
        NrtlParams::new(0.568, -54.8, -0.915, 882.0, 0.3),
        AzeotropeType::PressureMax,
    )
    .expect("fixture mixture")
}

/// Zeotropic aqueous alcohol.
pub fn methwater_like() -> Mixture {
    Mixture::new(
        "methwater-like",
        methanol(),
        water(),
        NrtlParams::new(-0.693, 172.987, 2.7322, -617.269, 0.3),
        AzeotropeType::None,
    )
    .expect("fixture mixture")
}

/// Pressure-minimum azeotrope.
pub fn acechl_like() -> Mixture {
    Mixture::new(
        "acechl-like",
        acetone(),
        chloroform(),
        NrtlParams::new(0.3, -250.0, -0.2, -60.0, 0.3),
        AzeotropeType::PressureMin,
    )
    .expect("fixture mixture")
}

pub fn all() -> Vec<Mixture> {
    vec![ethbenz_like(), methwater_like(), acechl_like()]
}

pub fn by_label(label: &str) -> Option<Mixture> {
    all().into_iter().find(|m| m.label == label)
}
