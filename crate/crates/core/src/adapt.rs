//! Pathwise mesh adaptation driven by the discrete Laplacian of the phase
//! field: elements at the interface are refined down to `h_min`, elements in
//! the bulk are coarsened, and no element ever grows beyond the noise mesh.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FeFunction, FeSpace};
use crate::mesh::{ElementKey, MacroMesh, Mesh, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Target size of interface elements.
    pub h_min: f64,
    /// Ceiling on element size, the spacing of the noise mesh.
    pub h_tilde: f64,
    #[serde(default = "default_refine")]
    pub refine_fraction: f64,
    #[serde(default = "default_coarsen")]
    pub coarsen_fraction: f64,
}

fn default_refine() -> f64 {
    0.25
}

fn default_coarsen() -> f64 {
    0.1
}

impl AdaptConfig {
    pub fn new(h_min: f64, h_tilde: f64) -> Result<Self> {
        let c = AdaptConfig { h_min, h_tilde, refine_fraction: default_refine(), coarsen_fraction: default_coarsen() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.coarsen_fraction && self.coarsen_fraction < self.refine_fraction && self.refine_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < coarsen fraction < refine fraction <= 1, got {} and {}",
                self.coarsen_fraction, self.refine_fraction
            )));
        }
        if !(0.0 < self.h_min && self.h_min < self.h_tilde) {
            return Err(Error::Config(format!("need 0 < h_min < h_tilde, got {} and {}", self.h_min, self.h_tilde)));
        }
        Ok(())
    }

    /// Largest admissible diameter of a merged element.
    fn ceiling_diameter(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.h_tilde * (1.0 + 1e-12)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarkSet {
    pub refine: Vec<usize>,
    pub coarsen: Vec<usize>,
    pub eta_max: f64,
}

impl MarkSet {
    pub fn is_empty(&self) -> bool {
        self.refine.is_empty() && self.coarsen.is_empty()
    }
}

/// Per-element marking quantity: the largest `|Delta_h u|` over the vertices.
pub fn element_values(space: &FeSpace, u: &FeFunction) -> Result<(Vec<f64>, f64)> {
    let lap = space.discrete_laplacian(u)?;
    let nodal: Vec<f64> = lap.values().iter().map(|v| v.abs()).collect();
    let eta_max = nodal.iter().fold(0.0f64, |a, &b| a.max(b));
    let vals = space.mesh().elements().iter().map(|t| t.iter().map(|&i| nodal[i]).fold(0.0, f64::max)).collect();
    Ok((vals, eta_max))
}

/// Applies the thresholds to precomputed element values.
pub fn mark_values(mesh: &Mesh, values: &[f64], eta_max: f64, cfg: &AdaptConfig) -> MarkSet {
    let mut marks = MarkSet { eta_max, ..Default::default() };
    if !(eta_max > 0.0) {
        return marks;
    }
    for (e, &v) in values.iter().enumerate() {
        if v >= cfg.refine_fraction * eta_max {
            if mesh.size(e) > cfg.h_min * (1.0 + 1e-12) {
                marks.refine.push(e);
            }
        } else if v <= cfg.coarsen_fraction * eta_max {
            marks.coarsen.push(e);
        }
    }
    marks
}

pub fn mark(space: &FeSpace, u: &FeFunction, cfg: &AdaptConfig) -> Result<MarkSet> {
    let (values, eta_max) = element_values(space, u)?;
    Ok(mark_values(space.mesh(), &values, eta_max, cfg))
}

/// New mesh after one coarsening sweep and a refinement loop that bisects the
/// region of every refine-marked element until it is no larger than `h_min`.
/// Returns `None` if the mesh would not change.
pub fn adapt(mesh: &Mesh, marks: &MarkSet, cfg: &AdaptConfig) -> Result<Option<Mesh>> {
    cfg.validate()?;
    if marks.is_empty() {
        return Ok(None);
    }
    let ceiling = cfg.ceiling_diameter();
    let refine_roots: Vec<ElementKey> = marks.refine.iter().map(|&e| mesh.keys()[e]).collect();
    let mut current = if marks.coarsen.is_empty() {
        None
    } else {
        let c = mesh.coarsen(&marks.coarsen, |_: Point| ceiling)?;
        (c.keys() != mesh.keys()).then_some(c)
    };

    let roots: HashSet<ElementKey> = refine_roots.iter().copied().collect();
    let inside = |k: &ElementKey| {
        (0..=k.depth).any(|d| roots.contains(&k.ancestor(d)))
    };
    loop {
        let m = current.as_ref().unwrap_or(mesh);
        let todo: Vec<usize> = (0..m.element_count())
            .filter(|&e| inside(&m.keys()[e]) && m.size(e) > cfg.h_min * (1.0 + 1e-12))
            .collect();
        if todo.is_empty() {
            break;
        }
        current = Some(m.refine(&todo)?);
    }
    Ok(current)
}

/// Adapts `space` and moves `carried` onto the new mesh: by prolongation if
/// the new mesh refines the old one, by L2 projection otherwise.
pub fn adapt_space(
    space: &Arc<FeSpace>,
    marks: &MarkSet,
    cfg: &AdaptConfig,
    carried: &[&FeFunction],
) -> Result<(Arc<FeSpace>, Vec<FeFunction>)> {
    match adapt(space.mesh(), marks, cfg)? {
        None => Ok((space.clone(), carried.iter().map(|f| (*f).clone()).collect())),
        Some(m) => {
            let target = Arc::new(FeSpace::new(Arc::new(m)));
            let moved = carried
                .iter()
                .map(|f| crate::fem::transfer::transfer(f, space.mesh(), &target))
                .collect::<Result<Vec<_>>>()?;
            Ok((target, moved))
        }
    }
}

/// Resolves an initial profile by alternating projection, marking and
/// adaptation, starting from the macro mesh.
pub fn initial_space(
    macro_mesh: &Arc<MacroMesh>,
    u0: impl Fn(Point) -> f64,
    cfg: &AdaptConfig,
    max_rounds: usize,
) -> Result<(Arc<FeSpace>, FeFunction)> {
    let mut space = Arc::new(FeSpace::new(Arc::new(macro_mesh.mesh())));
    for _ in 0..max_rounds {
        let u = space.project_fn(&u0)?;
        let mut marks = mark(&space, &u, cfg)?;
        marks.coarsen.clear();
        match adapt(space.mesh(), &marks, cfg)? {
            Some(m) => space = Arc::new(FeSpace::new(Arc::new(m))),
            None => return Ok((space.clone(), u)),
        }
    }
    let u = space.project_fn(&u0)?;
    Ok((space, u))
}
