//! Built-in reproduction recipes, one per acceptance criterion.

pub struct Recipe {
    pub name: &'static str,
    pub criterion: &'static str,
    pub about: &'static str,
    pub config: &'static str,
}

macro_rules! recipe {
    ($name:literal, $crit:literal, $about:literal) => {
        Recipe {
            name: $name,
            criterion: $crit,
            about: $about,
            config: include_str!(concat!("../recipes/", $name, ".toml")),
        }
    };
}

pub const RECIPES: &[Recipe] = &[
    recipe!(
        "gaussian-w2",
        "A1",
        "grid W2 and entropies of two Gaussians"
    ),
    recipe!(
        "first-law",
        "A2",
        "per-trajectory first law under a stiffness ramp"
    ),
    recipe!(
        "jarzynski",
        "A3",
        "Jarzynski estimate from 10^5 trajectories"
    ),
    recipe!(
        "dissipation",
        "A4",
        "Fokker-Planck dissipation along the W2 geodesic"
    ),
    recipe!(
        "eta-ss",
        "A5",
        "power-optimal time split and its efficiency"
    ),
    recipe!(
        "gaussian-cycle",
        "A6",
        "Gaussian cycle, analytic vs Fokker-Planck"
    ),
    recipe!(
        "jko-optimum",
        "A7",
        "proximal step for the power-optimal target"
    ),
    recipe!(
        "pathologies",
        "A8",
        "mixtures, Dirac trains and the second variation"
    ),
    recipe!(
        "fisher-bound",
        "A9",
        "cycle sweep against the Fisher power bound"
    ),
    recipe!(
        "bound-achievability",
        "A10",
        "constrained bounds and the quadratic engine"
    ),
    recipe!(
        "dimensionless-oracle",
        "A11",
        "closed-form optimum vs brute-force search"
    ),
    recipe!(
        "entropy-rate",
        "A12",
        "entropy gain of constrained protocols"
    ),
];

pub fn find(name: &str) -> Option<&'static Recipe> {
    RECIPES.iter().find(|r| r.name == name)
}
