//! Scenario files shipped with the binary.

pub struct Demo {
    pub name: &'static str,
    pub summary: &'static str,
    pub source: &'static str,
}

pub const DEMOS: &[Demo] = &[
    Demo {
        name: "counterexample",
        summary: "u = max(0, -t): u_t jumps by 1 across t = 0, singular point with m = -1",
        source: include_str!("../demos/counterexample.cfg"),
    },
    Demo {
        name: "regular",
        summary: "half-space solution v_plus: regular points, continuous u_t",
        source: include_str!("../demos/regular.cfg"),
    },
    Demo {
        name: "singular_v0",
        summary: "v_0 = x^2 / 2: singular point with m = 0",
        source: include_str!("../demos/singular_v0.cfg"),
    },
    Demo {
        name: "family_portrait",
        summary: "v_m data with m = -0.5 plus the five homogeneous solutions and profile tables",
        source: include_str!("../demos/family_portrait.cfg"),
    },
    Demo {
        name: "variable_coefficients",
        summary: "a = 1 + 0.1x, b = 0.1, c = -0.2, f = 1 + 0.1t: blow-up ladder at a regular point",
        source: include_str!("../demos/variable_coefficients.cfg"),
    },
    Demo {
        name: "american_put",
        summary: "American put K = 1, r = 0.05, sigma = 0.3, T = 1 with a T = 30 perpetual check",
        source: include_str!("../demos/american_put.cfg"),
    },
];

/// Looks up `name`, with or without a `.cfg` suffix.
pub fn find(name: &str) -> Option<&'static Demo> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    DEMOS.iter().find(|d| d.name == name)
}

pub fn names() -> Vec<&'static str> {
    DEMOS.iter().map(|d| d.name).collect()
}
